#include "g2l/g2l_nets.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "g2l/errors.hpp"
#include "g2l/rng.hpp"

namespace g2l {

using nn::Matrix;
using nn::Tensor;

// --- configuration ------------------------------------------------------------

void G2LConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kConfigError, what); };
  if (net.num_classes < 1) fail("net.num_classes must be >= 1");
  if (net.num_keypoints < 3) fail("net.num_keypoints must be >= 3");
  if (net.keypoint_scheme == KeypointScheme::kBbx8 && net.num_keypoints != 8) {
    fail("net.num_keypoints must be 8 for the bbx8 scheme");
  }
  if (net.n_seg_points < 1 || net.n_canonical_points < 1) fail("point counts must be >= 1");
  if (!(net.coord_scale > 0.0)) fail("net.coord_scale must be positive");
  for (const auto* w : {&net.seg_point_widths, &net.seg_head_widths, &net.trans_point_widths,
                        &net.trans_head_widths, &net.evf_point_widths, &net.rot_point_widths,
                        &net.rot_head_widths, &net.rre_widths}) {
    if (w->empty()) fail("layer width lists must be non-empty");
    for (int x : *w) {
      if (x < 1) fail("layer widths must be positive");
    }
  }
  if (net.embedding_width < 1) fail("net.embedding_width must be positive");
  if (train.epochs < 0) fail("train.epochs must be >= 0");
  if (train.max_epochs < 1 || train.epochs > train.max_epochs) {
    fail("train.epochs exceeds train.max_epochs");
  }
  if (train.batch_size < 1) fail("train.batch_size must be >= 1");
  if (!(train.learning_rate > 0.0)) fail("train.learning_rate must be positive");
  if (train.halve_every_epochs < 1) fail("train.halve_every_epochs must be >= 1");
  for (double l : {train.lambda_seg, train.lambda_t, train.lambda_v, train.lambda_r,
                   train.lambda_rre}) {
    if (!(l >= 0.0)) fail("loss weights must be non-negative");
  }
  if (!(train.translation_jitter_mm >= 0.0)) fail("train.translation_jitter_mm must be >= 0");
}

namespace {

std::string scheme_name(KeypointScheme s) { return s == KeypointScheme::kFps ? "fps" : "bbx8"; }

KeypointScheme scheme_from(const std::string& s) {
  if (s == "bbx8") return KeypointScheme::kBbx8;
  if (s == "fps") return KeypointScheme::kFps;
  throw Error(ErrorCode::kConfigError, "bad value for 'net.keypoint_scheme'");
}

}  // namespace

json to_json(const G2LConfig& c) {
  const auto& n = c.net;
  const auto& t = c.train;
  return {
      {"net",
       {{"num_classes", n.num_classes},
        {"keypoint_scheme", scheme_name(n.keypoint_scheme)},
        {"num_keypoints", n.num_keypoints},
        {"n_seg_points", n.n_seg_points},
        {"n_canonical_points", n.n_canonical_points},
        {"coord_scale", n.coord_scale},
        {"seg_point_widths", n.seg_point_widths},
        {"seg_head_widths", n.seg_head_widths},
        {"trans_point_widths", n.trans_point_widths},
        {"trans_head_widths", n.trans_head_widths},
        {"evf_point_widths", n.evf_point_widths},
        {"embedding_width", n.embedding_width},
        {"rot_point_widths", n.rot_point_widths},
        {"rot_head_widths", n.rot_head_widths},
        {"rre_widths", n.rre_widths},
        {"one_hot_points", n.one_hot_points},
        {"one_hot_global", n.one_hot_global},
        {"use_sphere", n.use_sphere},
        {"use_evf", n.use_evf},
        {"use_rre", n.use_rre}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"halve_every_epochs", t.halve_every_epochs},
        {"max_epochs", t.max_epochs},
        {"lambda_seg", t.lambda_seg},
        {"lambda_t", t.lambda_t},
        {"lambda_v", t.lambda_v},
        {"lambda_r", t.lambda_r},
        {"lambda_rre", t.lambda_rre},
        {"translation_jitter_mm", t.translation_jitter_mm},
        {"seed", t.seed}}},
  };
}

G2LConfig g2l_config_from_json(const json& j) {
  require_known_keys(j, {"net", "train"}, "model");
  G2LConfig c;
  if (j.contains("net")) {
    const auto& n = j.at("net");
    const std::string ctx = "net";
    require_known_keys(n, {"num_classes", "keypoint_scheme", "num_keypoints", "n_seg_points",
                           "n_canonical_points", "coord_scale", "seg_point_widths",
                           "seg_head_widths", "trans_point_widths", "trans_head_widths",
                           "evf_point_widths", "embedding_width", "rot_point_widths",
                           "rot_head_widths", "rre_widths", "one_hot_points",
                           "one_hot_global", "use_sphere", "use_evf", "use_rre"},
                       ctx);
    auto& o = c.net;
    read_opt(n, "num_classes", o.num_classes, ctx);
    if (n.contains("keypoint_scheme")) {
      o.keypoint_scheme = scheme_from(n.at("keypoint_scheme").get<std::string>());
    }
    read_opt(n, "num_keypoints", o.num_keypoints, ctx);
    read_opt(n, "n_seg_points", o.n_seg_points, ctx);
    read_opt(n, "n_canonical_points", o.n_canonical_points, ctx);
    read_opt(n, "coord_scale", o.coord_scale, ctx);
    read_opt(n, "seg_point_widths", o.seg_point_widths, ctx);
    read_opt(n, "seg_head_widths", o.seg_head_widths, ctx);
    read_opt(n, "trans_point_widths", o.trans_point_widths, ctx);
    read_opt(n, "trans_head_widths", o.trans_head_widths, ctx);
    read_opt(n, "evf_point_widths", o.evf_point_widths, ctx);
    read_opt(n, "embedding_width", o.embedding_width, ctx);
    read_opt(n, "rot_point_widths", o.rot_point_widths, ctx);
    read_opt(n, "rot_head_widths", o.rot_head_widths, ctx);
    read_opt(n, "rre_widths", o.rre_widths, ctx);
    read_opt(n, "one_hot_points", o.one_hot_points, ctx);
    read_opt(n, "one_hot_global", o.one_hot_global, ctx);
    read_opt(n, "use_sphere", o.use_sphere, ctx);
    read_opt(n, "use_evf", o.use_evf, ctx);
    read_opt(n, "use_rre", o.use_rre, ctx);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    const std::string ctx = "train";
    require_known_keys(t, {"epochs", "batch_size", "learning_rate", "halve_every_epochs",
                           "max_epochs", "lambda_seg", "lambda_t", "lambda_v", "lambda_r",
                           "lambda_rre", "translation_jitter_mm", "seed"},
                       ctx);
    auto& o = c.train;
    read_opt(t, "epochs", o.epochs, ctx);
    read_opt(t, "batch_size", o.batch_size, ctx);
    read_opt(t, "learning_rate", o.learning_rate, ctx);
    read_opt(t, "halve_every_epochs", o.halve_every_epochs, ctx);
    read_opt(t, "max_epochs", o.max_epochs, ctx);
    read_opt(t, "lambda_seg", o.lambda_seg, ctx);
    read_opt(t, "lambda_t", o.lambda_t, ctx);
    read_opt(t, "lambda_v", o.lambda_v, ctx);
    read_opt(t, "lambda_r", o.lambda_r, ctx);
    read_opt(t, "lambda_rre", o.lambda_rre, ctx);
    read_opt(t, "translation_jitter_mm", o.translation_jitter_mm, ctx);
    read_opt(t, "seed", o.seed, ctx);
  }
  return c;
}

ClassInfo make_class_info(const ObjectModel& model, const NetConfig& cfg) {
  ClassInfo info;
  info.class_id = model.class_id;
  info.name = model.name;
  info.diameter = model.diameter;
  info.symmetric = model.symmetric;
  info.keypoints = cfg.keypoint_scheme == KeypointScheme::kBbx8
                       ? bbx8_keypoints(model)
                       : fps_keypoints(model, cfg.num_keypoints);
  return info;
}

// --- networks -------------------------------------------------------------------

namespace {

std::vector<int> with_output(std::vector<int> widths, int out) {
  widths.push_back(out);
  return widths;
}

Matrix points_matrix(const std::vector<Vec3>& pts, const Vec3& origin, double scale) {
  Matrix m(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = ((pts[i] - origin) / scale).transpose();
  }
  return m;
}

Matrix one_hot_row(const std::vector<double>& one_hot) {
  Matrix r(1, static_cast<Eigen::Index>(one_hot.size()));
  for (std::size_t i = 0; i < one_hot.size(); ++i) r(0, static_cast<Eigen::Index>(i)) = one_hot[i];
  return r;
}

}  // namespace

G2LModel::G2LModel(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  const int c = cfg.num_classes;
  const int k3 = 3 * cfg.num_keypoints;
  const int in_pt = 3 + (cfg.one_hot_points ? c : 0);
  const int oh_g = cfg.one_hot_global ? c : 0;
  auto s = [&](std::uint64_t id) { return mix_seed(seed, id); };

  trans_.seg_point = nn::Mlp(params_, "trans.seg_point", in_pt, cfg.seg_point_widths, true, s(1));
  const int seg_w = trans_.seg_point.out_dim();
  trans_.seg_head = nn::Mlp(params_, "trans.seg_head", 2 * seg_w + oh_g,
                            with_output(cfg.seg_head_widths, 2), false, s(2));
  trans_.trans_point =
      nn::Mlp(params_, "trans.res_point", in_pt, cfg.trans_point_widths, true, s(3));
  trans_.trans_head = nn::Mlp(params_, "trans.res_head", trans_.trans_point.out_dim() + oh_g,
                              with_output(cfg.trans_head_widths, 3), false, s(4));

  rot_.num_keypoints = cfg.num_keypoints;
  rot_.evf_point = nn::Mlp(params_, "rot.a_point", in_pt, cfg.evf_point_widths, true, s(5));
  const int evf_w = rot_.evf_point.out_dim();
  rot_.evf_embed = nn::Mlp(params_, "rot.a_embed", 2 * evf_w + oh_g, {cfg.embedding_width},
                           true, s(6));
  if (cfg.use_evf) {
    rot_.evf_vectors = nn::Linear(params_, "rot.a_vectors", cfg.embedding_width, k3, s(7));
  }
  rot_.rot_point =
      nn::Mlp(params_, "rot.b_point", cfg.embedding_width, cfg.rot_point_widths, true, s(8));
  rot_.rot_head = nn::Mlp(params_, "rot.b_head", rot_.rot_point.out_dim() + oh_g,
                          with_output(cfg.rot_head_widths, k3), false, s(9));
  if (cfg.use_rre) {
    rot_.rre = nn::Mlp(params_, "rot.c_residual", rot_.rot_point.out_dim() + k3,
                       with_output(cfg.rre_widths, k3), false, s(10));
  }
}

Matrix G2LModel::with_one_hot(const Matrix& x, const std::vector<double>& one_hot,
                              bool enabled) const {
  if (!enabled) return x;
  if (static_cast<int>(one_hot.size()) != cfg_.num_classes) {
    throw Error(ErrorCode::kShapeMismatch, "one-hot length does not match num_classes");
  }
  Matrix out(x.rows(), x.cols() + cfg_.num_classes);
  out.leftCols(x.cols()) = x;
  out.rightCols(cfg_.num_classes) = one_hot_row(one_hot).replicate(x.rows(), 1);
  return out;
}

Tensor G2LModel::segmentation_logits(const PointCloud& crop,
                                     const std::vector<double>& one_hot) const {
  if (crop.empty()) throw Error(ErrorCode::kEmptyCloud, "segmentation input is empty");
  const Matrix x = points_matrix(crop.points, centroid(crop.points), cfg_.coord_scale);
  const Tensor in = nn::constant(with_one_hot(x, one_hot, cfg_.one_hot_points));
  const Tensor local = nn::shared_point_mlp(in, trans_.seg_point);
  Tensor global = nn::max_pool_points(local);
  if (cfg_.one_hot_global) {
    global = nn::concat_cols({global, nn::constant(one_hot_row(one_hot))});
  }
  const Tensor head_in = nn::concat_cols({local, nn::broadcast_rows(global, local.rows())});
  return trans_.seg_head(head_in);
}

Tensor G2LModel::translation_residual(const std::vector<Vec3>& segmented, const Vec3& mean,
                                      const std::vector<double>& one_hot) const {
  if (segmented.empty()) throw Error(ErrorCode::kEmptyCloud, "no segmented points");
  const Matrix x = points_matrix(segmented, mean, cfg_.coord_scale);
  const Tensor in = nn::constant(with_one_hot(x, one_hot, cfg_.one_hot_points));
  Tensor global = nn::max_pool_points(nn::shared_point_mlp(in, trans_.trans_point));
  if (cfg_.one_hot_global) {
    global = nn::concat_cols({global, nn::constant(one_hot_row(one_hot))});
  }
  return trans_.trans_head(global);
}

EvfOutput G2LModel::evf_extract(const CanonicalCloud& canon,
                                const std::vector<double>& one_hot) const {
  if (canon.points.empty()) throw Error(ErrorCode::kEmptyCloud, "canonical cloud is empty");
  const Matrix x = points_matrix(canon.points.points, Vec3::Zero(), cfg_.coord_scale);
  const Tensor in = nn::constant(with_one_hot(x, one_hot, cfg_.one_hot_points));
  const Tensor local = nn::shared_point_mlp(in, rot_.evf_point);
  Tensor global = nn::max_pool_points(local);
  if (cfg_.one_hot_global) {
    global = nn::concat_cols({global, nn::constant(one_hot_row(one_hot))});
  }
  EvfOutput out;
  out.embedding = nn::shared_point_mlp(
      nn::concat_cols({local, nn::broadcast_rows(global, local.rows())}), rot_.evf_embed);
  if (cfg_.use_evf) out.vectors = rot_.evf_vectors(out.embedding);
  return out;
}

RotationOutput G2LModel::rotation_head(const Tensor& embedding,
                                       const std::vector<double>& one_hot) const {
  RotationOutput out;
  out.pooled = nn::max_pool_points(nn::shared_point_mlp(embedding, rot_.rot_point));
  Tensor in = out.pooled;
  if (cfg_.one_hot_global) in = nn::concat_cols({in, nn::constant(one_hot_row(one_hot))});
  out.keypoints = rot_.rot_head(in);
  return out;
}

Tensor G2LModel::rotation_residual(const RotationOutput& rot) const {
  if (!cfg_.use_rre) {
    throw Error(ErrorCode::kConfigError, "rotation residual head is disabled");
  }
  // Detached inputs: the residual head never sends gradient into blocks A/B.
  const Tensor in = nn::detach(nn::concat_cols({rot.pooled, rot.keypoints}));
  return rot_.rre(in);
}

SegTransResult G2LModel::segment_and_translate(const PointCloud& crop,
                                               const std::vector<double>& one_hot) const {
  const Matrix logits = segmentation_logits(crop, one_hot).value();
  SegTransResult out;
  out.mask.resize(crop.size());
  std::vector<Vec3> seg;
  for (std::size_t i = 0; i < crop.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.mask[i] = logits(r, 1) > logits(r, 0) ? 1 : 0;
    if (out.mask[i]) seg.push_back(crop.points[i]);
  }
  if (seg.empty()) {
    out.used_fallback = true;
    std::fill(out.mask.begin(), out.mask.end(), 1);
    seg = crop.points;
  }
  out.segmented_mean = centroid(seg);
  const Matrix res = translation_residual(seg, out.segmented_mean, one_hot).value();
  out.t_hat = out.segmented_mean + cfg_.coord_scale * Vec3(res(0, 0), res(0, 1), res(0, 2));
  return out;
}

KeypointPrediction G2LModel::predict_keypoints(const CanonicalCloud& canon,
                                               const std::vector<double>& one_hot) const {
  const int k = cfg_.num_keypoints;
  const EvfOutput evf = evf_extract(canon, one_hot);
  const RotationOutput rot = rotation_head(evf.embedding, one_hot);
  KeypointPrediction out;
  out.base.resize(k, 3);
  out.residual = PointMatrix::Zero(k, 3);
  const Matrix& p = rot.keypoints.value();
  for (int i = 0; i < k; ++i)
    for (int c = 0; c < 3; ++c) out.base(i, c) = cfg_.coord_scale * p(0, 3 * i + c);
  if (cfg_.use_rre) {
    const Matrix d = rotation_residual(rot).value();
    for (int i = 0; i < k; ++i)
      for (int c = 0; c < 3; ++c) out.residual(i, c) = cfg_.coord_scale * d(0, 3 * i + c);
  }
  out.refined = out.base + out.residual;
  return out;
}

// --- geometry stages ------------------------------------------------------------

PointCloud resample(const PointCloud& cloud, int n, std::uint64_t seed) {
  if (cloud.empty()) throw Error(ErrorCode::kEmptyCloud, "cannot resample an empty cloud");
  Rng rng(seed);
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::size_t> pick;
  if (cloud.size() >= static_cast<std::size_t>(n)) {
    // Partial Fisher-Yates: uniform subset without replacement.
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> d(static_cast<std::size_t>(i), idx.size() - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[d(rng)]);
    }
    pick.assign(idx.begin(), idx.begin() + n);
  } else {
    pick = idx;
    std::uniform_int_distribution<std::size_t> d(0, cloud.size() - 1);
    while (pick.size() < static_cast<std::size_t>(n)) pick.push_back(d(rng));
  }
  PointCloud out;
  out.points.reserve(pick.size());
  for (auto i : pick) out.points.push_back(cloud.points[i]);
  if (cloud.labels) {
    std::vector<std::uint8_t> labels;
    labels.reserve(pick.size());
    for (auto i : pick) labels.push_back((*cloud.labels)[i]);
    out.labels = std::move(labels);
  }
  return out;
}

CanonicalCloud canonicalize(const PointCloud& crop, const std::vector<std::uint8_t>& mask,
                            const Vec3& t_hat, int n_points, std::uint64_t seed) {
  if (mask.size() != crop.size()) {
    throw Error(ErrorCode::kShapeMismatch, "mask length does not match cloud");
  }
  PointCloud selected;
  for (std::size_t i = 0; i < crop.size(); ++i) {
    if (mask[i]) selected.points.push_back(crop.points[i]);
  }
  if (selected.empty()) {
    throw Error(ErrorCode::kEmptySegmentation, "mask selects no points");
  }
  CanonicalCloud out;
  out.t_hat = t_hat;
  out.points = resample(selected, n_points, seed);
  for (auto& p : out.points.points) p -= t_hat;
  return out;
}

Pose recover_pose(const PointMatrix& refined, const KeypointSet& kps_model, const Vec3& t_hat) {
  if (refined.rows() != kps_model.points.rows()) {
    throw Error(ErrorCode::kDegenerateConfiguration, "keypoint count mismatch");
  }
  Pose pose;
  pose.rotation = kabsch_align(kps_model.points, refined);
  const Vec3 model_mean = kps_model.points.colwise().mean().transpose();
  const Vec3 refined_mean = refined.colwise().mean().transpose();
  pose.translation = refined_mean + t_hat - pose.rotation * model_mean;
  return pose;
}

Tensor vector_field_loss(const Tensor& pred, const Tensor& target, int num_keypoints) {
  const double denom = static_cast<double>(num_keypoints) * static_cast<double>(pred.rows());
  return nn::scale(nn::sum_squared_error(pred, target), 1.0 / denom);
}

// --- inference --------------------------------------------------------------------

PipelineOptions pipeline_options(const NetConfig& cfg) {
  return {cfg.use_sphere, cfg.n_seg_points, cfg.n_canonical_points};
}

SegTransResult OracleStages::segment_and_translate(const PointCloud& crop,
                                                   const std::vector<double>&) const {
  if (!crop.labels) throw Error(ErrorCode::kConfigError, "oracle needs labelled crops");
  SegTransResult out;
  out.mask = *crop.labels;
  std::vector<Vec3> seg;
  for (std::size_t i = 0; i < crop.size(); ++i) {
    if (out.mask[i]) seg.push_back(crop.points[i]);
  }
  if (seg.empty()) {
    out.used_fallback = true;
    std::fill(out.mask.begin(), out.mask.end(), 1);
    seg = crop.points;
  }
  out.segmented_mean = centroid(seg);
  out.t_hat = out.segmented_mean + translation_residual_gt(PointCloud{seg, {}}, gt_.translation);
  return out;
}

KeypointPrediction OracleStages::predict_keypoints(const CanonicalCloud& canon,
                                                   const std::vector<double>&) const {
  KeypointPrediction out;
  out.base = transform_points(gt_, kps_.points);
  out.base.rowwise() -= canon.t_hat.transpose();
  out.residual = PointMatrix::Zero(out.base.rows(), 3);
  out.refined = out.base + out.residual;
  return out;
}

InferenceResult infer(const SceneRecord& scene, const ClassInfo& cls, const PoseStages& stages,
                      const PipelineOptions& opts) {
  using Clock = std::chrono::steady_clock;
  auto ms = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
  };
  InferenceResult res;
  const auto t0 = Clock::now();
  try {
    PointCloud crop = frustum_crop(scene.depth, scene.intrinsics, scene.detection);
    if (scene.labels.size() == crop.size()) crop.labels = scene.labels;
    res.frustum_points = crop.size();
    const auto t1 = Clock::now();
    res.timings.frustum_ms = ms(t0, t1);
    if (opts.use_sphere) {
      const Vec3 c = sphere_center(scene.detection, scene.depth, scene.intrinsics);
      crop = sphere_crop(crop, SphereRegion{c, cls.diameter});
    }
    res.sphere_points = crop.size();
    const auto t2 = Clock::now();
    res.timings.sphere_ms = ms(t1, t2);

    const PointCloud sub = resample(crop, opts.n_seg_points, mix_seed(scene.seed, 101));
    const SegTransResult st = stages.segment_and_translate(sub, scene.detection.one_hot);
    res.t_hat = st.t_hat;
    const auto t3 = Clock::now();
    res.timings.translation_ms = ms(t2, t3);

    const CanonicalCloud canon = canonicalize(sub, st.mask, st.t_hat, opts.n_canonical_points,
                                              mix_seed(scene.seed, 102));
    res.keypoints = stages.predict_keypoints(canon, scene.detection.one_hot);
    res.pose = recover_pose(res.keypoints.refined, cls.keypoints, st.t_hat);
    res.found = true;
    const auto t4 = Clock::now();
    res.timings.rotation_ms = ms(t3, t4);
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::kEmptyCloud:
      case ErrorCode::kMissingDepthAtPeak:
      case ErrorCode::kEmptySegmentation:
      case ErrorCode::kDegenerateConfiguration:
        res.found = false;
        res.failure = e.what();
        break;
      default:
        throw;
    }
  }
  res.timings.total_ms = ms(t0, Clock::now());
  return res;
}

// --- training ---------------------------------------------------------------------

std::optional<TrainSample> make_train_sample(const SceneRecord& rec, const ClassInfo& cls,
                                             bool use_sphere, std::string id) {
  TrainSample s;
  s.gt_pose = rec.gt_pose;
  s.one_hot = rec.detection.one_hot;
  s.class_id = rec.class_id;
  s.id = std::move(id);
  try {
    s.crop = frustum_crop(rec.depth, rec.intrinsics, rec.detection);
    if (rec.labels.size() != s.crop.size()) {
      throw Error(ErrorCode::kShapeMismatch, "record labels do not match its frustum crop");
    }
    s.crop.labels = rec.labels;
    if (use_sphere) {
      const Vec3 c = sphere_center(rec.detection, rec.depth, rec.intrinsics);
      s.crop = sphere_crop(s.crop, SphereRegion{c, cls.diameter});
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kEmptyCloud || e.code() == ErrorCode::kMissingDepthAtPeak) {
      return std::nullopt;
    }
    throw;
  }
  return s;
}

namespace {

Matrix flatten_rows(const PointMatrix& m, double inv_scale) {
  Matrix out(1, m.rows() * 3);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (int c = 0; c < 3; ++c) out(0, 3 * i + c) = m(i, c) * inv_scale;
  return out;
}

double mean_keypoint_distance(const Matrix& a, const Matrix& b, int k, double scale) {
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    sum += (a.block(0, 3 * i, 1, 3) - b.block(0, 3 * i, 1, 3)).norm();
  }
  return scale * sum / k;
}

}  // namespace

LossBreakdown sample_loss(const G2LModel& model, const TrainSample& sample, const ClassInfo& cls,
                          const TrainConfig& cfg, std::uint64_t seed) {
  const NetConfig& net = model.config();
  const double scale = net.coord_scale;
  LossBreakdown out;

  const PointCloud sub = resample(sample.crop, net.n_seg_points, mix_seed(seed, 1));
  std::vector<int> labels(sub.labels->begin(), sub.labels->end());
  const Tensor ce = nn::cross_entropy(model.segmentation_logits(sub, sample.one_hot), labels);
  out.seg = ce.item();
  Tensor total = nn::scale(ce, cfg.lambda_seg);

  std::vector<Vec3> obj;
  for (std::size_t i = 0; i < sub.size(); ++i) {
    if ((*sub.labels)[i]) obj.push_back(sub.points[i]);
  }
  if (obj.empty()) {
    out.total = total;
    return out;
  }
  out.has_object = true;

  const Vec3& t = sample.gt_pose.translation;
  const Vec3 mean = centroid(obj);
  const Tensor res = model.translation_residual(obj, mean, sample.one_hot);
  Matrix res_target(1, 3);
  res_target.row(0) = ((t - mean) / scale).transpose();
  const Tensor trans_loss = nn::mse_loss(res, nn::constant(res_target));
  out.trans = trans_loss.item();
  total = nn::add(total, nn::scale(trans_loss, cfg.lambda_t));

  // Rotation branch: ground-truth mask, jittered ground-truth centre.
  Rng rng(mix_seed(seed, 2));
  Vec3 t_hat = t;
  if (cfg.translation_jitter_mm > 0.0) {
    for (int i = 0; i < 3; ++i) t_hat[i] += gaussian(rng, cfg.translation_jitter_mm);
  }
  const CanonicalCloud canon = canonicalize(sample.crop, *sample.crop.labels, t_hat,
                                            net.n_canonical_points, mix_seed(seed, 3));
  PointMatrix kp_mm = transform_points(sample.gt_pose, cls.keypoints.points);
  kp_mm.rowwise() -= t_hat.transpose();
  const Matrix kp_target = flatten_rows(kp_mm, 1.0 / scale);
  const int k = net.num_keypoints;

  const EvfOutput evf = model.evf_extract(canon, sample.one_hot);
  if (net.use_evf) {
    const VectorFieldGT vgt = vector_field_gt(canon.points, kp_mm);
    const Tensor vloss = vector_field_loss(evf.vectors, nn::constant(vgt.vectors), k);
    out.vec = vloss.item();
    total = nn::add(total, nn::scale(vloss, cfg.lambda_v));
  }
  const RotationOutput rot = model.rotation_head(evf.embedding, sample.one_hot);
  const Tensor rloss = nn::mse_loss(rot.keypoints, nn::constant(kp_target));
  out.rot = rloss.item();
  total = nn::add(total, nn::scale(rloss, cfg.lambda_r));
  out.kp_err_base = mean_keypoint_distance(rot.keypoints.value(), kp_target, k, scale);
  out.kp_err_refined = out.kp_err_base;

  if (net.use_rre) {
    const Tensor delta = model.rotation_residual(rot);
    // Online target from the current block-B output.
    const Matrix target = kp_target - rot.keypoints.value();
    const Tensor rre_loss = nn::mse_loss(delta, nn::constant(target));
    out.rre = rre_loss.item();
    total = nn::add(total, nn::scale(rre_loss, cfg.lambda_rre));
    out.kp_err_refined = mean_keypoint_distance(rot.keypoints.value() + delta.value(),
                                                kp_target, k, scale);
  }
  out.total = total;
  return out;
}

const ClassInfo& G2LCheckpoint::class_info(int class_id) const {
  for (const auto& c : classes) {
    if (c.class_id == class_id) return c;
  }
  throw Error(ErrorCode::kConfigError, "class " + std::to_string(class_id) + " not in checkpoint");
}

G2LModel model_from_checkpoint(const G2LCheckpoint& ckpt) {
  G2LModel model(ckpt.config.net, ckpt.config.train.seed);
  for (auto& [name, t] : model.params()) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end() || it->second.rows() != t.rows() ||
        it->second.cols() != t.cols()) {
      throw Error(ErrorCode::kIoError, "checkpoint lacks parameter " + name);
    }
    t.mutable_value() = it->second;
  }
  return model;
}

namespace {

std::map<std::string, Matrix> export_params(const nn::ParamStore& store) {
  std::map<std::string, Matrix> out;
  for (const auto& [name, t] : store) out.emplace(name, t.value());
  return out;
}

}  // namespace

G2LCheckpoint train_g2l(const std::vector<TrainSample>& data, const std::vector<ClassInfo>& classes,
                        const G2LConfig& cfg, const G2LCheckpoint* resume,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::kConfigError, "training set is empty");

  G2LCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.classes = classes;
  G2LModel model(cfg.net, cfg.train.seed);
  nn::AdamState opt;
  opt.base_lr = cfg.train.learning_rate;
  opt.learning_rate = cfg.train.learning_rate;
  opt.halve_every_epochs = cfg.train.halve_every_epochs;
  opt.max_epochs = cfg.train.max_epochs;
  if (resume) {
    if (to_json(resume->config).at("net") != to_json(cfg).at("net")) {
      throw Error(ErrorCode::kConfigError, "resume checkpoint has a different network config");
    }
    model = model_from_checkpoint(*resume);
    opt = resume->optimizer;
    ckpt.epoch = resume->epoch;
    ckpt.history = resume->history;
  }

  std::map<int, const ClassInfo*> by_id;
  for (const auto& c : classes) by_id[c.class_id] = &c;

  const std::uint64_t seed = cfg.train.seed;
  const int bs = cfg.train.batch_size;
  for (int epoch = ckpt.epoch; epoch < cfg.train.epochs; ++epoch) {
    opt.set_epoch(epoch);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog log;
    log.epoch = epoch;
    log.lr = opt.learning_rate;
    int n_obj = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(bs)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(bs));
      model.params().zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const TrainSample& s = data[order[i]];
        auto it = by_id.find(s.class_id);
        if (it == by_id.end()) {
          throw Error(ErrorCode::kConfigError, "sample class not in catalogue");
        }
        const LossBreakdown lb =
            sample_loss(model, s, *it->second, cfg.train,
                        mix_seed(mix_seed(seed, static_cast<std::uint64_t>(epoch)), order[i]));
        nn::backward(nn::scale(lb.total, 1.0 / static_cast<double>(end - start)));
        log.seg += lb.seg;
        log.trans += lb.trans;
        log.vec += lb.vec;
        log.rot += lb.rot;
        log.rre += lb.rre;
        log.total += lb.total.item();
        if (lb.has_object) {
          ++n_obj;
          log.kp_err_base += lb.kp_err_base;
          log.kp_err_refined += lb.kp_err_refined;
        }
      }
      nn::adam_step(model.params(), opt);
    }
    const double n = static_cast<double>(data.size());
    log.seg /= n;
    log.trans /= n;
    log.vec /= n;
    log.rot /= n;
    log.rre /= n;
    log.total /= n;
    if (n_obj > 0) {
      log.kp_err_base /= n_obj;
      log.kp_err_refined /= n_obj;
    }
    ckpt.history.push_back(log);
    ckpt.epoch = epoch + 1;
    if (on_epoch) on_epoch(log);
  }
  ckpt.params = export_params(model.params());
  ckpt.optimizer = opt;
  return ckpt;
}

// --- checkpoint file ------------------------------------------------------------

namespace {

json history_json(const std::vector<EpochLog>& h) {
  json arr = json::array();
  for (const auto& e : h) {
    arr.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"seg", e.seg}, {"trans", e.trans},
                   {"vec", e.vec}, {"rot", e.rot}, {"rre", e.rre}, {"total", e.total},
                   {"kp_err_base", e.kp_err_base}, {"kp_err_refined", e.kp_err_refined}});
  }
  return arr;
}

}  // namespace

std::vector<std::uint8_t> encode_g2l_checkpoint(const G2LCheckpoint& ckpt) {
  nn::CheckpointData d;
  d.config_json = to_json(ckpt.config).dump();
  d.config_hash = nn::fnv1a64(d.config_json);
  d.epoch = static_cast<std::uint32_t>(ckpt.epoch);
  json classes = json::array();
  for (const auto& c : ckpt.classes) {
    classes.push_back({{"class_id", c.class_id},
                       {"name", c.name},
                       {"diameter", c.diameter},
                       {"symmetric", c.symmetric},
                       {"scheme", scheme_name(c.keypoints.scheme)}});
    d.arrays["class/" + std::to_string(c.class_id) + "/keypoints"] = c.keypoints.points;
  }
  d.metadata_json = json{{"classes", classes}, {"history", history_json(ckpt.history)}}.dump();
  for (const auto& [name, m] : ckpt.params) d.arrays["param/" + name] = m;
  d.optimizer = ckpt.optimizer;
  return nn::encode_checkpoint(d);
}

void save_g2l_checkpoint(const G2LCheckpoint& ckpt, const std::filesystem::path& p) {
  const auto bytes = encode_g2l_checkpoint(ckpt);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed: " + p.string());
}

G2LCheckpoint load_g2l_checkpoint(const std::filesystem::path& p) {
  const nn::CheckpointData d = nn::load_checkpoint(p);
  G2LCheckpoint ckpt;
  try {
    ckpt.config = g2l_config_from_json(json::parse(d.config_json));
    const json meta = json::parse(d.metadata_json);
    for (const auto& c : meta.at("classes")) {
      ClassInfo info;
      info.class_id = c.at("class_id").get<int>();
      info.name = c.at("name").get<std::string>();
      info.diameter = c.at("diameter").get<double>();
      info.symmetric = c.at("symmetric").get<bool>();
      info.keypoints.scheme = scheme_from(c.at("scheme").get<std::string>());
      const auto it = d.arrays.find("class/" + std::to_string(info.class_id) + "/keypoints");
      if (it == d.arrays.end()) throw Error(ErrorCode::kIoError, "missing keypoints");
      info.keypoints.points = it->second;
      ckpt.classes.push_back(std::move(info));
    }
    for (const auto& e : meta.at("history")) {
      EpochLog l;
      l.epoch = e.at("epoch").get<int>();
      l.lr = e.at("lr").get<double>();
      l.seg = e.at("seg").get<double>();
      l.trans = e.at("trans").get<double>();
      l.vec = e.at("vec").get<double>();
      l.rot = e.at("rot").get<double>();
      l.rre = e.at("rre").get<double>();
      l.total = e.at("total").get<double>();
      l.kp_err_base = e.at("kp_err_base").get<double>();
      l.kp_err_refined = e.at("kp_err_refined").get<double>();
      ckpt.history.push_back(l);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIoError, std::string("malformed checkpoint metadata: ") + e.what());
  }
  for (const auto& [name, m] : d.arrays) {
    if (name.rfind("param/", 0) == 0) ckpt.params.emplace(name.substr(6), m);
  }
  ckpt.optimizer = d.optimizer;
  ckpt.epoch = static_cast<int>(d.epoch);
  return ckpt;
}

}  // namespace g2l
