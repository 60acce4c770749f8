#include "prism/encode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prism {

namespace {

double quantize(double x) { return std::round(std::clamp(x, 0.0, 1.0) * 255.0) / 255.0; }

// Fractional overlap of source interval [i, i+1) with destination cell c of n cells over m pixels.
struct Span {
  int lo, hi;
  double cell_lo, cell_hi;
};

Span cell_span(int c, int n, int m) {
  const double s = static_cast<double>(m) / n;
  const double lo = c * s, hi = (c + 1) * s;
  return {static_cast<int>(std::floor(lo)), std::min(m, static_cast<int>(std::ceil(hi))), lo, hi};
}

double overlap(int i, const Span& sp) { return std::min(i + 1.0, sp.cell_hi) - std::max<double>(i, sp.cell_lo); }

}  // namespace

FeatureLayout reward_layout(const std::vector<int>& target_ids, int views, int grid) {
  FeatureLayout l;
  l.views = views;
  l.grid = grid;
  l.mask_ids = target_ids;
  l.mask_ids.push_back(kGripperId);
  return l;
}

std::array<double, 5> encode_action(const Action& a, const WorldConfig& cfg) {
  std::array<double, 5> v{};
  for (int i = 0; i < 3; ++i) v[i] = std::clamp(a.delta_translation[i] / cfg.max_translation, -1.0, 1.0);
  v[3] = std::clamp(a.delta_yaw / cfg.max_yaw, -1.0, 1.0);
  v[4] = a.gripper_command == GripperCommand::open ? -1.0 : a.gripper_command == GripperCommand::close ? 1.0 : 0.0;
  return v;
}

Action decode_action(const std::array<double, 5>& v, const WorldConfig& cfg) {
  Action a;
  for (int i = 0; i < 3; ++i) a.delta_translation[i] = v[i] * cfg.max_translation;
  a.delta_yaw = v[3] * cfg.max_yaw;
  a.gripper_command = v[4] < -0.5 ? GripperCommand::open : v[4] > 0.5 ? GripperCommand::close : GripperCommand::hold;
  return a;
}

FeatureVector encode(const std::vector<IdDepthImage>& views, const FeatureLayout& layout, Aperture aperture,
                     const Action& action, const WorldConfig& cfg) {
  if (static_cast<int>(views.size()) != layout.views) {
    throw std::invalid_argument("encode expects " + std::to_string(layout.views) + " views, got " +
                                std::to_string(views.size()));
  }
  const int g = layout.grid;
  FeatureVector x(static_cast<std::size_t>(layout.dim()), 0.0);
  for (int vi = 0; vi < layout.views; ++vi) {
    const auto& img = views[static_cast<std::size_t>(vi)];
    if (img.width < g || img.height < g || img.ids.size() != static_cast<std::size_t>(img.width) * img.height) {
      throw std::invalid_argument("view image smaller than the feature grid");
    }
    double* base = x.data() + static_cast<std::ptrdiff_t>(vi) * layout.view_block();
    for (int cy = 0; cy < g; ++cy) {
      const Span sy = cell_span(cy, g, img.height);
      for (int cx = 0; cx < g; ++cx) {
        const Span sx = cell_span(cx, g, img.width);
        double acc = 0.0, area = 0.0;
        for (int v = sy.lo; v < sy.hi; ++v) {
          const double wy = overlap(v, sy);
          for (int u = sx.lo; u < sx.hi; ++u) {
            const double wgt = wy * overlap(u, sx);
            if (wgt <= 0.0) continue;
            acc += wgt * img.depth_at(u, v) / img.far;
            area += wgt;
            const auto id = static_cast<int>(img.id_at(u, v));
            if (id == 0) continue;
            for (std::size_t m = 0; m < layout.mask_ids.size(); ++m) {
              if (layout.mask_ids[m] == id) base[(1 + static_cast<int>(m)) * layout.cells() + cy * g + cx] = 1.0;
            }
          }
        }
        base[cy * g + cx] = quantize(acc / area);
      }
    }
  }
  const std::size_t t = static_cast<std::size_t>(layout.image_dim());
  x[t] = aperture == Aperture::closed ? 1.0 : 0.0;
  const auto av = encode_action(action, cfg);
  for (int i = 0; i < 5; ++i) x[t + 1 + static_cast<std::size_t>(i)] = av[static_cast<std::size_t>(i)];
  return x;
}

FeatureLayout single_view_layout(const FeatureLayout& layout) {
  FeatureLayout l = layout;
  l.views = 1;
  return l;
}

FeatureVector select_view(const FeatureVector& x, const FeatureLayout& layout, int view) {
  if (static_cast<int>(x.size()) != layout.dim()) throw std::invalid_argument("feature size does not match layout");
  if (view < 0 || view >= layout.views) throw std::invalid_argument("view index out of range");
  FeatureVector out;
  out.reserve(static_cast<std::size_t>(layout.view_block() + 6));
  const auto b = x.begin() + static_cast<std::ptrdiff_t>(view) * layout.view_block();
  out.insert(out.end(), b, b + layout.view_block());
  out.insert(out.end(), x.end() - 6, x.end());
  return out;
}

PackedFeatures pack(const FeatureVector& x, const FeatureLayout& layout) {
  if (static_cast<int>(x.size()) != layout.dim()) throw std::invalid_argument("feature size does not match layout");
  PackedFeatures p;
  const auto n = static_cast<std::size_t>(layout.image_dim());
  p.grid.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.grid[i] = static_cast<std::uint8_t>(std::lround(x[i] * 255.0));
  std::copy(x.begin() + static_cast<std::ptrdiff_t>(n), x.end(), p.tail.begin());
  return p;
}

void PackedFeatures::unpack_into(FeatureVector& out) const {
  out.resize(grid.size() + tail.size());
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] = grid[i] / 255.0;
  std::copy(tail.begin(), tail.end(), out.begin() + static_cast<std::ptrdiff_t>(grid.size()));
}

FeatureVector PackedFeatures::unpack() const {
  FeatureVector out;
  unpack_into(out);
  return out;
}

std::vector<double> policy_features(const IdDepthImage& scene_view, const Camera& cam, const WorldState& w,
                                    const std::vector<int>& target_ids) {
  std::vector<double> f(kPolicyFeatureDim, 0.0);
  auto clip = [](double v) { return std::clamp(v, -1.0, 1.0); };
  const Vec3 ee = w.gripper.pose.t;
  f[0] = clip(ee.x() / 0.45);
  f[1] = clip(ee.y() / 0.45);
  f[2] = clip((ee.z() - 0.3) / 0.3);
  f[3] = w.gripper.aperture == Aperture::closed ? 1.0 : -1.0;
  for (std::size_t k = 0; k < 2 && k < target_ids.size(); ++k) {
    double su = 0, sv = 0, sd = 0;
    int n = 0;
    for (int v = 0; v < scene_view.height; ++v) {
      for (int u = 0; u < scene_view.width; ++u) {
        if (static_cast<int>(scene_view.id_at(u, v)) != target_ids[k]) continue;
        su += u;
        sv += v;
        sd += scene_view.depth_at(u, v);
        ++n;
      }
    }
    double* s = f.data() + 4 + 7 * k;
    if (n == 0) continue;
    const Vec3 p = cam.pose.t + cam.pixel_ray(su / n, sv / n) * (sd / n);
    s[0] = 1.0;
    s[1] = clip(p.x() / 0.45);
    s[2] = clip(p.y() / 0.45);
    s[3] = clip(p.z() / 0.3);
    s[4] = clip((p.x() - ee.x()) / 0.2);
    s[5] = clip((p.y() - ee.y()) / 0.2);
    s[6] = clip((p.z() - ee.z()) / 0.2);
  }
  return f;
}

}  // namespace prism
