#pragma once

#include "prism/raster.hpp"
#include "prism/scene_io.hpp"
#include "prism/world.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace prism {

enum class Predicate { overlaps, occludes, above_in_image, inside_footprint, near_in_image };

Predicate parse_predicate(const std::string& s);
std::string to_string(Predicate p);

/// Horizontal square patch at height z (world), centered on the origin.
struct PlaneRegion {
  double z = 0.0;
  double half_extent = 0.45;
};

/// Relation between two concrete ids (or a subject and a plane region).
struct ProjectionRelation {
  Predicate predicate = Predicate::overlaps;
  int subject = 0;
  std::optional<int> object;
  std::optional<PlaneRegion> region;
  double threshold_px = 0.0;       // near_in_image only
  std::vector<std::string> views;  // camera names it applies to; empty = every view

  bool applies_to(const std::string& camera) const;
};

enum class SkillFamily { pick, place, insert, stack, press };

SkillFamily parse_skill(const std::string& s);
std::string to_string(SkillFamily s);
/// Skill whose template labels the given task family.
SkillFamily skill_for(TaskFamily f);

/// Template relation over roles: "gripper", "target" (task target 0), "receptacle" (task target 1).
struct RoleRelation {
  Predicate predicate = Predicate::overlaps;
  std::string subject;
  std::string object;                // empty when `region` is set
  std::optional<PlaneRegion> region;
  double threshold_px = 0.0;
  std::vector<std::string> views;
};

struct QueryTemplate {
  SkillFamily family = SkillFamily::pick;
  std::vector<RoleRelation> pre_task;
  std::vector<RoleRelation> post_task;
};

/// Built-in templates for the five skill families.
QueryTemplate default_template(SkillFamily f);

json template_to_json(const QueryTemplate& t);
QueryTemplate template_from_json(const json& j);

/// Resolves roles against the task's target ids.
std::vector<ProjectionRelation> bind_relations(const std::vector<RoleRelation>& rels, const TaskSpec& task);

enum class Stage { pre, post };

struct LabelRecord {
  int view_count = 0;
  std::vector<std::string> views;
  std::vector<bool> per_view;
  int label = 0;
  Stage stage = Stage::post;
  int timestep = -1;
};

struct OracleErrorModel {
  double p_flip = 0.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument unless 0 <= p_flip < 0.5.
  void check() const;
};

/// Per-object footprints in one view, recovered by rendering each object alone.
class ViewFootprints {
 public:
  ViewFootprints(const WorldState& w, const Camera& cam);

  struct Footprint {
    std::vector<int> pixels;    // row-major indices
    std::vector<double> depth;  // per pixel in `pixels`
  };

  const Camera& camera() const { return cam_; }
  /// Throws std::invalid_argument for ids absent from the scene.
  const Footprint& of(int id) const;

 private:
  Camera cam_;
  std::vector<RenderItem> items_;
  mutable std::map<int, Footprint> cache_;
};

bool relation_holds(const ViewFootprints& view, const ProjectionRelation& rel);

/// Image row of the plane region's topmost point (continuous), +inf when entirely behind the camera.
double region_top_row(const Camera& cam, const PlaneRegion& r);

/// Conjunction over views x applicable relations.
LabelRecord evaluate_views(const WorldState& w, const std::vector<Camera>& cameras,
                           const std::vector<ProjectionRelation>& relations);

/// evaluate_views with each per-view verdict flipped independently with probability p_flip before the
/// conjunction. The flip of view j depends only on (seed, query_index, j), so camera prefixes share flips.
LabelRecord noisy_label(const WorldState& w, const std::vector<Camera>& cameras,
                        const std::vector<ProjectionRelation>& relations, const OracleErrorModel& err,
                        std::uint64_t query_index, bool majority = false);

/// Aggregates already-flipped verdicts.
int aggregate(const std::vector<bool>& verdicts, bool majority);

struct TwoStageLabels {
  LabelRecord pre;
  LabelRecord post;
};

/// Pre-task relations on `pre_world`, post-task relations on `post_world`. Throws when the template's
/// family does not label the task's family.
TwoStageLabels two_stage_query(const WorldState& pre_world, const WorldState& post_world, const TaskSpec& task,
                               const QueryTemplate& tmpl, const std::vector<Camera>& cameras,
                               const OracleErrorModel& err, std::uint64_t query_index);

/// 3D ground truth behind a template stage: grasp alignment for "pre", task success for "post".
bool ground_truth(const WorldState& w, const TaskSpec& task, Stage stage, const WorldConfig& wcfg = {});

// ---- view-count study ----

struct StudyScene {
  WorldState world;
  TaskSpec task;
  Stage stage = Stage::post;
  bool truth = false;
  int ambiguous_view = -1;  // camera index fooled by construction, -1 when none
};

/// Tolerance used to separate positive and negative configurations per skill (m).
double alignment_tolerance(SkillFamily s);

/// Random labeled scene for a skill. Positives sit well inside the 3D predicate. Negatives are either
/// ambiguity-free (displaced by more than twice the tolerance along every planar axis) or, when
/// `ambiguous_view` >= 0, displaced along that camera's viewing ray so the view still sees the relation.
/// Returns nullopt when the requested ambiguity could not be constructed within the attempt budget.
std::optional<StudyScene> make_study_scene(SkillFamily s, bool positive, int ambiguous_view,
                                           const std::vector<Camera>& cameras, const QueryTemplate& tmpl,
                                           std::uint64_t seed, std::uint64_t index);

struct StudyConfig {
  int trials = 500;
  int k_max = 5;
  double positive_fraction = 0.0;
  bool majority = false;
  OracleErrorModel err{0.05, 0};
};

struct StudyRow {
  int k = 0;
  int correct = 0;
  int incorrect = 0;
  double accuracy = 0.0;
};

/// Labels `trials` scenes with the first k cameras for k = 1..k_max and counts agreement with the 3D truth.
/// Each trial draws its ambiguous view uniformly among all cameras.
std::vector<StudyRow> view_count_study(SkillFamily s, const std::vector<Camera>& cameras, const QueryTemplate& tmpl,
                                       const StudyConfig& cfg);

void write_study_csv(const std::filesystem::path& path, const std::vector<StudyRow>& rows);

}  // namespace prism
