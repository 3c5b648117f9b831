#include "tofvae/phantom.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "tofvae/errors.hpp"
#include "tofvae/rng.hpp"

namespace tofvae {

namespace {

using Vec3 = std::array<double, 3>;

// Substream ids: one independent generator per ingredient so enabling the
// aneurysm cannot shift tissue, geometry, or noise draws.
constexpr uint64_t kTissueStream = 1;
constexpr uint64_t kVesselStream = 2;
constexpr uint64_t kNoiseStream = 3;
constexpr uint64_t kAneurysmStream = 4;

// Uniform Catmull-Rom segment between p1 and p2 (p0, p3 neighbors).
Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2,
                 const Vec3& p3, double u) {
  Vec3 q;
  const double u2 = u * u, u3 = u2 * u;
  for (int i = 0; i < 3; ++i) {
    q[i] = 0.5 * (2.0 * p1[i] + (-p0[i] + p2[i]) * u +
                  (2.0 * p0[i] - 5.0 * p1[i] + 4.0 * p2[i] - p3[i]) * u2 +
                  (-p0[i] + 3.0 * p1[i] - 3.0 * p2[i] + p3[i]) * u3);
  }
  return q;
}

double dist(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct Ellipsoid {
  Vec3 center;
  Vec3 semi;

  double rho(const Vec3& p) const {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double d = (p[i] - center[i]) / semi[i];
      s += d * d;
    }
    return std::sqrt(s);
  }
};

// Stamps a solid ball into the mask and max-combines its intensity into
// the field.
void stamp_ball(const Vec3& c, double r, float intensity,
                const std::array<int64_t, 3>& dims, std::vector<float>& field,
                BinaryMask3& mask) {
  const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(c[0] - r)));
  const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(c[1] - r)));
  const int64_t z0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(c[2] - r)));
  const int64_t x1 = std::min<int64_t>(dims[0] - 1, static_cast<int64_t>(std::ceil(c[0] + r)));
  const int64_t y1 = std::min<int64_t>(dims[1] - 1, static_cast<int64_t>(std::ceil(c[1] + r)));
  const int64_t z1 = std::min<int64_t>(dims[2] - 1, static_cast<int64_t>(std::ceil(c[2] + r)));
  const double r2 = r * r;
  for (int64_t z = z0; z <= z1; ++z) {
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) - c[0];
        const double dy = static_cast<double>(y) - c[1];
        const double dz = static_cast<double>(z) - c[2];
        if (dx * dx + dy * dy + dz * dz <= r2) {
          const size_t idx = static_cast<size_t>((z * dims[1] + y) * dims[0] + x);
          mask.voxels[idx] = 1;
          field[idx] = std::max(field[idx], intensity);
        }
      }
    }
  }
}

// Smooth texture in [-1, 1]: uniform noise on a coarse lattice (one knot
// per 8 voxels), trilinearly interpolated.
std::vector<float> smooth_noise_field(const std::array<int64_t, 3>& dims,
                                      rng::Prng& prng) {
  constexpr int64_t kCell = 8;
  const int64_t gx = dims[0] / kCell + 2;
  const int64_t gy = dims[1] / kCell + 2;
  const int64_t gz = dims[2] / kCell + 2;
  std::vector<float> grid(static_cast<size_t>(gx * gy * gz));
  for (float& g : grid) g = static_cast<float>(prng.uniform(-1.0, 1.0));

  auto gat = [&](int64_t x, int64_t y, int64_t z) {
    return grid[static_cast<size_t>((z * gy + y) * gx + x)];
  };

  std::vector<float> out(static_cast<size_t>(dims[0] * dims[1] * dims[2]));
  size_t idx = 0;
  for (int64_t z = 0; z < dims[2]; ++z) {
    const double fz = static_cast<double>(z) / kCell;
    const int64_t z0 = static_cast<int64_t>(fz);
    const double tz = fz - static_cast<double>(z0);
    for (int64_t y = 0; y < dims[1]; ++y) {
      const double fy = static_cast<double>(y) / kCell;
      const int64_t y0 = static_cast<int64_t>(fy);
      const double ty = fy - static_cast<double>(y0);
      for (int64_t x = 0; x < dims[0]; ++x, ++idx) {
        const double fx = static_cast<double>(x) / kCell;
        const int64_t x0 = static_cast<int64_t>(fx);
        const double tx = fx - static_cast<double>(x0);
        const double c00 = gat(x0, y0, z0) * (1 - tx) + gat(x0 + 1, y0, z0) * tx;
        const double c10 = gat(x0, y0 + 1, z0) * (1 - tx) + gat(x0 + 1, y0 + 1, z0) * tx;
        const double c01 = gat(x0, y0, z0 + 1) * (1 - tx) + gat(x0 + 1, y0, z0 + 1) * tx;
        const double c11 = gat(x0, y0 + 1, z0 + 1) * (1 - tx) + gat(x0 + 1, y0 + 1, z0 + 1) * tx;
        const double c0 = c00 * (1 - ty) + c10 * ty;
        const double c1 = c01 * (1 - ty) + c11 * ty;
        out[idx] = static_cast<float>(c0 * (1 - tz) + c1 * tz);
      }
    }
  }
  return out;
}

} // namespace

void PhantomSpec::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (dims[static_cast<size_t>(i)] < 48) {
      throw Error::data(fmt::format(
          "phantom: dims must each be >= 48 to fit vessels and patches, got "
          "{}x{}x{}",
          dims[0], dims[1], dims[2]));
    }
  }
  const int64_t min_dim = std::min({dims[0], dims[1], dims[2]});
  if (n_vessels < 1) {
    throw Error::data("phantom: n_vessels must be >= 1");
  }
  if (!(vessel_radius_lo > 0.0) || vessel_radius_hi < vessel_radius_lo) {
    throw Error::data(fmt::format(
        "phantom: invalid vessel radius range [{}, {}]", vessel_radius_lo,
        vessel_radius_hi));
  }
  if (vessel_radius_hi >= static_cast<double>(min_dim) / 2.0) {
    throw Error::data(fmt::format(
        "phantom: vessel radius {} does not fit inside a {} voxel dimension",
        vessel_radius_hi, min_dim));
  }
  if (!(aneurysm_radius_lo > 0.0) || aneurysm_radius_hi < aneurysm_radius_lo ||
      aneurysm_radius_hi >= static_cast<double>(min_dim) / 2.0) {
    throw Error::data(fmt::format(
        "phantom: invalid aneurysm radius range [{}, {}] for min dimension {}",
        aneurysm_radius_lo, aneurysm_radius_hi, min_dim));
  }
  auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in01(vessel_intensity_lo) || !in01(vessel_intensity_hi) ||
      vessel_intensity_hi < vessel_intensity_lo || !in01(tissue_intensity)) {
    throw Error::data("phantom: intensities must lie in [0, 1]");
  }
  if (tissue_noise_amp < 0.0 || noise_sigma < 0.0) {
    throw Error::data("phantom: noise parameters must be non-negative");
  }
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();

  rng::Prng tissue_rng(rng::derive(spec.seed, kTissueStream));
  rng::Prng vessel_rng(rng::derive(spec.seed, kVesselStream));
  rng::Prng noise_rng(rng::derive(spec.seed, kNoiseStream));
  rng::Prng aneurysm_rng(rng::derive(spec.seed, kAneurysmStream));

  const auto& dims = spec.dims;
  const size_t n = static_cast<size_t>(dims[0] * dims[1] * dims[2]);

  Ellipsoid head;
  for (int i = 0; i < 3; ++i) {
    head.center[static_cast<size_t>(i)] = (static_cast<double>(dims[static_cast<size_t>(i)]) - 1.0) / 2.0;
    head.semi[static_cast<size_t>(i)] = 0.42 * static_cast<double>(dims[static_cast<size_t>(i)]);
  }

  // Tissue: base intensity plus smooth texture, confined to the head.
  const std::vector<float> texture = smooth_noise_field(dims, tissue_rng);
  std::vector<float> tissue(n, 0.0f);
  {
    size_t idx = 0;
    for (int64_t z = 0; z < dims[2]; ++z) {
      for (int64_t y = 0; y < dims[1]; ++y) {
        for (int64_t x = 0; x < dims[0]; ++x, ++idx) {
          const Vec3 p{static_cast<double>(x), static_cast<double>(y),
                       static_cast<double>(z)};
          if (head.rho(p) <= 1.0) {
            tissue[idx] = static_cast<float>(
                spec.tissue_intensity +
                spec.tissue_noise_amp * static_cast<double>(texture[idx]));
          }
        }
      }
    }
  }

  Phantom out;
  out.vessel_mask = BinaryMask3::create(dims);
  out.aneurysm_mask = BinaryMask3::create(dims);
  std::vector<float> field(n, 0.0f);

  // Vessels: Catmull-Rom curves through seeded control points spread along
  // a dominant axis, swept as constant-radius tubes (ball stamps every
  // quarter voxel of arc length).
  std::vector<std::vector<Vec3>> centerlines(static_cast<size_t>(spec.n_vessels));
  std::vector<float> vessel_intensity(static_cast<size_t>(spec.n_vessels));
  constexpr double kStep = 0.25;
  for (int64_t vi = 0; vi < spec.n_vessels; ++vi) {
    const double radius =
        vessel_rng.uniform(spec.vessel_radius_lo, spec.vessel_radius_hi);
    const float intensity = static_cast<float>(vessel_rng.uniform(
        spec.vessel_intensity_lo, spec.vessel_intensity_hi));
    vessel_intensity[static_cast<size_t>(vi)] = intensity;
    const int64_t n_ctrl = 4 + static_cast<int64_t>(vessel_rng.uniform_int(3));
    const int axis = static_cast<int>(vessel_rng.uniform_int(3));

    std::vector<Vec3> ctrl(static_cast<size_t>(n_ctrl));
    for (int64_t k = 0; k < n_ctrl; ++k) {
      const double t =
          (static_cast<double>(k) + 0.5) / static_cast<double>(n_ctrl);
      Vec3 p;
      for (int i = 0; i < 3; ++i) {
        if (i == axis) {
          p[static_cast<size_t>(i)] = head.center[static_cast<size_t>(i)] +
                 head.semi[static_cast<size_t>(i)] * 0.9 * (2.0 * t - 1.0) +
                 vessel_rng.uniform(-2.0, 2.0);
        } else {
          p[static_cast<size_t>(i)] = head.center[static_cast<size_t>(i)] +
                 head.semi[static_cast<size_t>(i)] * vessel_rng.uniform(-0.55, 0.55);
        }
      }
      // Pull stray points back inside a slightly shrunken head so tubes
      // stay surrounded by tissue.
      const double rho = head.rho(p);
      if (rho > 0.9) {
        for (int i = 0; i < 3; ++i) {
          p[static_cast<size_t>(i)] = head.center[static_cast<size_t>(i)] +
                 (p[static_cast<size_t>(i)] - head.center[static_cast<size_t>(i)]) * (0.9 / rho);
        }
      }
      ctrl[static_cast<size_t>(k)] = p;
    }

    auto& line = centerlines[static_cast<size_t>(vi)];
    for (size_t seg = 0; seg + 1 < ctrl.size(); ++seg) {
      const Vec3& p0 = ctrl[seg == 0 ? 0 : seg - 1];
      const Vec3& p1 = ctrl[seg];
      const Vec3& p2 = ctrl[seg + 1];
      const Vec3& p3 = ctrl[std::min(ctrl.size() - 1, seg + 2)];
      const double chord = dist(p1, p2);
      const int64_t steps = std::max<int64_t>(
          2, static_cast<int64_t>(std::ceil(chord / kStep)) * 2);
      for (int64_t s = 0; s < steps; ++s) {
        const double u = static_cast<double>(s) / static_cast<double>(steps);
        line.push_back(catmull_rom(p0, p1, p2, p3, u));
      }
    }
    line.push_back(ctrl.back());

    for (const Vec3& q : line) {
      stamp_ball(q, radius, intensity, dims, field, out.vessel_mask);
    }
  }

  // Aneurysm: a ball at the host vessel's intensity, offset sideways from
  // a point on its centerline so it reads as a bulge.
  if (spec.with_aneurysm) {
    const size_t host = static_cast<size_t>(aneurysm_rng.uniform_int(
        static_cast<uint64_t>(spec.n_vessels)));
    const auto& line = centerlines[host];
    const Vec3 at = line[aneurysm_rng.uniform_int(line.size())];
    const double radius = aneurysm_rng.uniform(spec.aneurysm_radius_lo,
                                               spec.aneurysm_radius_hi);
    Vec3 dir{aneurysm_rng.normal(), aneurysm_rng.normal(), aneurysm_rng.normal()};
    const double norm = std::max(1e-9, dist(dir, Vec3{0, 0, 0}));
    Vec3 center;
    for (int i = 0; i < 3; ++i) {
      center[static_cast<size_t>(i)] = at[static_cast<size_t>(i)] + dir[static_cast<size_t>(i)] / norm * (0.6 * radius);
      center[static_cast<size_t>(i)] = std::clamp(center[static_cast<size_t>(i)], radius,
                            static_cast<double>(dims[static_cast<size_t>(i)] - 1) - radius);
    }
    stamp_ball(center, radius, vessel_intensity[host], dims, field,
               out.aneurysm_mask);
    out.has_aneurysm = true;
  }

  // Compose: brightest structure wins, then additive scanner-like noise.
  // The noise stream is consumed for every voxel regardless of the masks,
  // keeping paired healthy/aneurysm volumes identical outside the bulge.
  out.volume = Volume::create(dims);
  for (size_t i = 0; i < n; ++i) {
    double val = std::max(tissue[i], field[i]);
    val += spec.noise_sigma * noise_rng.normal();
    out.volume.voxels[i] = static_cast<float>(std::clamp(val, 0.0, 1.0));
  }
  return out;
}

std::vector<CohortMember> generate_cohort(int64_t n, double aneurysm_fraction,
                                          uint64_t base_seed,
                                          const PhantomSpec& proto) {
  if (n < 1) {
    throw Error::usage("generate_cohort: n must be >= 1");
  }
  if (!(aneurysm_fraction >= 0.0) || aneurysm_fraction > 1.0) {
    throw Error::usage(fmt::format(
        "generate_cohort: aneurysm_fraction must lie in [0, 1], got {}",
        aneurysm_fraction));
  }
  const int64_t k = std::llround(static_cast<double>(n) * aneurysm_fraction);
  std::vector<CohortMember> cohort;
  cohort.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    PhantomSpec spec = proto;
    spec.seed = base_seed + static_cast<uint64_t>(i);
    spec.with_aneurysm = i < k;
    CohortMember m;
    m.seed = spec.seed;
    m.phantom = generate_phantom(spec);
    m.label = m.phantom.has_aneurysm;
    cohort.push_back(std::move(m));
  }
  return cohort;
}

} // namespace tofvae
