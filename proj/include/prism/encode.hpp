#pragma once

#include "prism/raster.hpp"
#include "prism/world.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace prism {

using FeatureVector = std::vector<double>;

/// Layout of the multi-view reward features. Per view: grid x grid depth (normalized by the far plane and
/// quantized to 1/255), then one max-pooled mask per id in `mask_ids`. After the views: aperture bit and
/// the 5-value action encoding.
struct FeatureLayout {
  int views = 4;
  int grid = 24;
  std::vector<int> mask_ids;  // task targets, then the gripper proxy

  int cells() const { return grid * grid; }
  int channels() const { return 1 + static_cast<int>(mask_ids.size()); }
  int view_block() const { return channels() * cells(); }
  int image_dim() const { return views * view_block(); }
  int dim() const { return image_dim() + 1 + 5; }
};

/// Targets plus the gripper proxy id.
FeatureLayout reward_layout(const std::vector<int>& target_ids, int views = 4, int grid = 24);

/// Action as 5 values in [-1, 1]: deltas over their clamps, then gripper (-1 open, 0 hold, +1 close).
std::array<double, 5> encode_action(const Action& a, const WorldConfig& cfg = {});
Action decode_action(const std::array<double, 5>& v, const WorldConfig& cfg = {});

/// Throws std::invalid_argument when the view count or image size does not fit the layout.
FeatureVector encode(const std::vector<IdDepthImage>& views, const FeatureLayout& layout, Aperture aperture,
                     const Action& action, const WorldConfig& cfg = {});

/// The layout restricted to one view (used by the feasibility predictor).
FeatureLayout single_view_layout(const FeatureLayout& layout);
FeatureVector select_view(const FeatureVector& x, const FeatureLayout& layout, int view);

/// Lossless 8-bit storage for encoded vectors: grid values are multiples of 1/255 in [0, 1].
struct PackedFeatures {
  std::vector<std::uint8_t> grid;
  std::array<double, 6> tail{};  // aperture, action

  FeatureVector unpack() const;
  /// Writes into `out` (resized) without allocating when the capacity fits.
  void unpack_into(FeatureVector& out) const;
};

PackedFeatures pack(const FeatureVector& x, const FeatureLayout& layout);

/// Compact policy observation from the scene view plus proprioception: end-effector position and
/// aperture, and for up to two targets the visibility flag, the back-projected mask centroid and its
/// offset from the end effector. Entries are clipped to [-1, 1].
constexpr int kPolicyFeatureDim = 4 + 2 * 7;
std::vector<double> policy_features(const IdDepthImage& scene_view, const Camera& cam, const WorldState& w,
                                    const std::vector<int>& target_ids);

}  // namespace prism
