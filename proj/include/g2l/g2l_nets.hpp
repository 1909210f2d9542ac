#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "g2l/annotate.hpp"
#include "g2l/frustum_sphere.hpp"
#include "g2l/geom.hpp"
#include "g2l/json_util.hpp"
#include "g2l/nn.hpp"
#include "g2l/synth.hpp"

namespace g2l {

// Layer widths and pipeline switches. Positions fed to and predicted by the
// networks are expressed in units of coord_scale millimetres.
struct NetConfig {
  int num_classes = 1;
  KeypointScheme keypoint_scheme = KeypointScheme::kBbx8;
  int num_keypoints = 8;
  int n_seg_points = 384;
  int n_canonical_points = 256;
  double coord_scale = 100.0;

  std::vector<int> seg_point_widths{64, 128};
  std::vector<int> seg_head_widths{128, 64};
  std::vector<int> trans_point_widths{64, 128};
  std::vector<int> trans_head_widths{64};
  std::vector<int> evf_point_widths{64, 128};
  int embedding_width = 128;
  std::vector<int> rot_point_widths{128};
  std::vector<int> rot_head_widths{128};
  std::vector<int> rre_widths{128};

  bool one_hot_points = true;
  bool one_hot_global = true;

  // Ablation switches: 3D sphere crop, vector-field supervision, residual head.
  bool use_sphere = true;
  bool use_evf = true;
  bool use_rre = true;
};

struct TrainConfig {
  int epochs = 60;
  int batch_size = 8;
  double learning_rate = 1e-3;
  int halve_every_epochs = 50;
  int max_epochs = 200;
  double lambda_seg = 1.0;
  double lambda_t = 1.0;
  double lambda_v = 1.0;
  double lambda_r = 1.0;
  double lambda_rre = 1.0;
  // Gaussian perturbation of the translation used to centre training clouds.
  double translation_jitter_mm = 5.0;
  std::uint64_t seed = 7;
};

struct G2LConfig {
  NetConfig net;
  TrainConfig train;

  void validate() const;
};

json to_json(const G2LConfig& c);
// Strict: unknown keys raise ConfigError. Missing keys keep defaults.
G2LConfig g2l_config_from_json(const json& j);

// Per-class data the pipeline needs at inference.
struct ClassInfo {
  int class_id = 0;
  std::string name;
  double diameter = 0.0;
  bool symmetric = false;
  KeypointSet keypoints;
};

ClassInfo make_class_info(const ObjectModel& model, const NetConfig& cfg);

// Translation localisation: per-point object/background logits plus a
// residual from the segmented mean to the object origin.
struct TransLocNet {
  nn::Mlp seg_point;
  nn::Mlp seg_head;
  nn::Mlp trans_point;
  nn::Mlp trans_head;
};

// Rotation localisation. Block A: point features -> per-point embedding ->
// unit vectors to each keypoint. Block B: pooled embedding -> keypoints.
// Block C: keypoint residual from the detached pooled feature and block B
// output.
struct RotLocNet {
  nn::Mlp evf_point;
  nn::Mlp evf_embed;
  nn::Linear evf_vectors;
  nn::Mlp rot_point;
  nn::Mlp rot_head;
  nn::Mlp rre;
  int num_keypoints = 8;
};

struct CanonicalCloud {
  PointCloud points;  // mm, input minus t_hat
  Vec3 t_hat = Vec3::Zero();
};

struct SegTransResult {
  std::vector<std::uint8_t> mask;
  Vec3 segmented_mean = Vec3::Zero();
  Vec3 t_hat = Vec3::Zero();
  bool used_fallback = false;
};

struct EvfOutput {
  nn::Tensor embedding;  // N x D
  nn::Tensor vectors;    // N x 3K
};

struct RotationOutput {
  nn::Tensor pooled;     // 1 x D'
  nn::Tensor keypoints;  // 1 x 3K, coord_scale units
};

struct KeypointPrediction {
  PointMatrix base;      // K x 3, mm, canonical frame
  PointMatrix residual;  // K x 3
  PointMatrix refined;   // base + residual
};

class G2LModel;

// Stage hooks used by infer(); the trained model and the ground-truth oracle
// both implement it.
class PoseStages {
 public:
  virtual ~PoseStages() = default;
  virtual SegTransResult segment_and_translate(
      const PointCloud& crop, const std::vector<double>& one_hot) const = 0;
  virtual KeypointPrediction predict_keypoints(
      const CanonicalCloud& canon, const std::vector<double>& one_hot) const = 0;
};

class G2LModel : public PoseStages {
 public:
  explicit G2LModel(const NetConfig& cfg, std::uint64_t seed = 0);

  const NetConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const TransLocNet& trans() const { return trans_; }
  const RotLocNet& rot() const { return rot_; }

  // Raw network passes on prepared inputs.
  nn::Tensor segmentation_logits(const PointCloud& crop,
                                 const std::vector<double>& one_hot) const;
  nn::Tensor translation_residual(const std::vector<Vec3>& segmented,
                                  const Vec3& mean,
                                  const std::vector<double>& one_hot) const;
  EvfOutput evf_extract(const CanonicalCloud& canon,
                        const std::vector<double>& one_hot) const;
  RotationOutput rotation_head(const nn::Tensor& embedding,
                               const std::vector<double>& one_hot) const;
  nn::Tensor rotation_residual(const RotationOutput& rot) const;

  SegTransResult segment_and_translate(
      const PointCloud& crop, const std::vector<double>& one_hot) const override;
  KeypointPrediction predict_keypoints(
      const CanonicalCloud& canon,
      const std::vector<double>& one_hot) const override;

 private:
  nn::Matrix with_one_hot(const nn::Matrix& x, const std::vector<double>& one_hot,
                          bool enabled) const;

  NetConfig cfg_;
  nn::ParamStore params_;
  TransLocNet trans_;
  RotLocNet rot_;
};

// Masked points minus t_hat, resampled to n_points (uniform with a fixed
// seed; with replacement only when fewer points are available). Throws
// EmptySegmentation.
CanonicalCloud canonicalize(const PointCloud& crop,
                            const std::vector<std::uint8_t>& mask,
                            const Vec3& t_hat, int n_points, std::uint64_t seed);

// Deterministic resampling to exactly n points; labels follow.
PointCloud resample(const PointCloud& cloud, int n, std::uint64_t seed);

// R = kabsch(model keypoints -> refined); T chosen so the aligned model
// keypoint centroid lands on the refined centroid + t_hat.
Pose recover_pose(const PointMatrix& refined, const KeypointSet& kps_model,
                  const Vec3& t_hat);

// Eq.-style vector-field loss: sum |v~ - v|^2 / (K |X|).
nn::Tensor vector_field_loss(const nn::Tensor& pred, const nn::Tensor& target,
                             int num_keypoints);

// --- inference --------------------------------------------------------------

struct StageTimings {
  double frustum_ms = 0.0;
  double sphere_ms = 0.0;
  double translation_ms = 0.0;
  double rotation_ms = 0.0;
  double total_ms = 0.0;
};

struct InferenceResult {
  bool found = false;
  Pose pose;
  std::string failure;
  Vec3 t_hat = Vec3::Zero();
  KeypointPrediction keypoints;
  StageTimings timings;
  std::size_t frustum_points = 0;
  std::size_t sphere_points = 0;
};

struct PipelineOptions {
  bool use_sphere = true;
  int n_seg_points = 384;
  int n_canonical_points = 256;
};

PipelineOptions pipeline_options(const NetConfig& cfg);

// frustum -> sphere -> segmentation/translation -> canonical frame ->
// keypoints -> pose. Empty clouds yield found = false.
InferenceResult infer(const SceneRecord& scene, const ClassInfo& cls,
                      const PoseStages& stages, const PipelineOptions& opts);

// Injects ground truth at each stage; for plumbing checks.
class OracleStages : public PoseStages {
 public:
  OracleStages(const Pose& gt, const KeypointSet& kps) : gt_(gt), kps_(kps) {}
  SegTransResult segment_and_translate(
      const PointCloud& crop, const std::vector<double>& one_hot) const override;
  KeypointPrediction predict_keypoints(
      const CanonicalCloud& canon,
      const std::vector<double>& one_hot) const override;

 private:
  Pose gt_;
  KeypointSet kps_;
};

// --- training ---------------------------------------------------------------

struct TrainSample {
  PointCloud crop;  // frustum or sphere crop, labels attached
  Pose gt_pose;
  std::vector<double> one_hot;
  int class_id = 0;
  std::string id;
};

// Returns nullopt when the crop is empty.
std::optional<TrainSample> make_train_sample(const SceneRecord& rec,
                                             const ClassInfo& cls,
                                             bool use_sphere, std::string id = {});

struct LossBreakdown {
  nn::Tensor total;
  double seg = 0.0;
  double trans = 0.0;
  double vec = 0.0;
  double rot = 0.0;
  double rre = 0.0;
  // Mean keypoint distances (mm) before and after the residual.
  double kp_err_base = 0.0;
  double kp_err_refined = 0.0;
  bool has_object = false;
};

LossBreakdown sample_loss(const G2LModel& model, const TrainSample& sample,
                          const ClassInfo& cls, const TrainConfig& cfg,
                          std::uint64_t seed);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double seg = 0.0;
  double trans = 0.0;
  double vec = 0.0;
  double rot = 0.0;
  double rre = 0.0;
  double total = 0.0;
  double kp_err_base = 0.0;
  double kp_err_refined = 0.0;
};

struct G2LCheckpoint {
  G2LConfig config;
  std::vector<ClassInfo> classes;
  std::map<std::string, nn::Matrix> params;
  nn::AdamState optimizer;
  int epoch = 0;  // epochs completed
  std::vector<EpochLog> history;

  const ClassInfo& class_info(int class_id) const;
};

G2LModel model_from_checkpoint(const G2LCheckpoint& ckpt);

void save_g2l_checkpoint(const G2LCheckpoint& ckpt, const std::filesystem::path& p);
G2LCheckpoint load_g2l_checkpoint(const std::filesystem::path& p);
std::vector<std::uint8_t> encode_g2l_checkpoint(const G2LCheckpoint& ckpt);

// Joint training of both networks. With `resume`, continues from its epoch
// counter, parameters and optimiser state. Throws ConfigError.
G2LCheckpoint train_g2l(const std::vector<TrainSample>& data,
                        const std::vector<ClassInfo>& classes,
                        const G2LConfig& cfg,
                        const G2LCheckpoint* resume = nullptr,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace g2l
