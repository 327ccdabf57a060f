#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scaleloc/anchors.hpp"
#include "scaleloc/error.hpp"
#include "scaleloc/featpyr.hpp"
#include "scaleloc/geometry.hpp"
#include "scaleloc/rng.hpp"

namespace scaleloc {

// Per-layer loss weighting and multi-task constants.
struct LossConfig {
  std::vector<int> layer_ids{3, 4, 5};
  std::vector<double> mean_heights{48.0, 96.0, 156.0};
  std::vector<double> scale_factors{5.0, 20.0, 10.0};
  double lambda = 10.0;
  double gamma = 3.0;
  double eps = 1e-7;
  RegressionMode mode = RegressionMode::Raw;

  void validate() const {
    if (layer_ids.empty() || mean_heights.size() != layer_ids.size() || scale_factors.size() != layer_ids.size())
      throw ConfigError("loss needs one (mean height, scale factor) pair per layer");
    for (std::size_t i = 0; i < layer_ids.size(); ++i)
      if (!(mean_heights[i] > 0.0) || !(scale_factors[i] > 0.0))
        throw ConfigError("loss mean heights and scale factors must be positive");
    if (!(lambda > 0.0)) throw ConfigError("loss.lambda must be positive");
    if (!(gamma >= 1.0)) throw ConfigError("loss.gamma must be >= 1");
    if (!(eps > 0.0 && eps < 0.5)) throw ConfigError("loss.eps must be in (0, 0.5)");
  }

  std::size_t index_of(int layer_id) const {
    for (std::size_t i = 0; i < layer_ids.size(); ++i)
      if (layer_ids[i] == layer_id) return i;
    throw std::out_of_range("loss config has no layer " + std::to_string(layer_id));
  }
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Softmax over per-layer sigmoid scores of the object height, in layer_ids
// order. Each layer's raw score is sigmoid((h - mean_height) / scale).
inline std::vector<double> layer_weights(double h, const LossConfig& cfg) {
  std::vector<double> a(cfg.layer_ids.size());
  for (std::size_t m = 0; m < a.size(); ++m) a[m] = sigmoid((h - cfg.mean_heights[m]) / cfg.scale_factors[m]);
  const double top = *std::max_element(a.begin(), a.end());
  double sum = 0.0;
  for (double& v : a) sum += (v = std::exp(v - top));
  for (double& v : a) v /= sum;
  return a;
}

inline double layer_weight(double h, int layer_id, const LossConfig& cfg) {
  return layer_weights(h, cfg)[cfg.index_of(layer_id)];
}

// 0.5 |v|^2 inside the unit ball, |v| - 0.5 outside, on the Euclidean norm.
inline double smooth_l1(const Vec4& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]);
  return n < 1.0 ? 0.5 * n * n : n - 0.5;
}

inline Vec4 smooth_l1_grad(const Vec4& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]);
  const double s = n < 1.0 ? 1.0 : 1.0 / n;
  return {s * v[0], s * v[1], s * v[2], s * v[3]};
}

inline double clamp_prob(double p, double eps) { return std::clamp(p, eps, 1.0 - eps); }

struct ClsSample {
  bool positive = false;
  double prob = 0.5;
};

// Weighted cross-entropy: 1/(1+gamma) times the mean positive log-loss plus
// gamma/(1+gamma) times the mean negative log-loss -log(1 - p). An empty side
// contributes nothing.
inline double cls_loss(const std::vector<ClsSample>& batch, double gamma, double eps = 1e-7) {
  double pos = 0.0, neg = 0.0;
  std::size_t np = 0, nn = 0;
  for (const auto& s : batch) {
    const double p = clamp_prob(s.prob, eps);
    if (s.positive) {
      pos -= std::log(p);
      ++np;
    } else {
      neg -= std::log(1.0 - p);
      ++nn;
    }
  }
  double out = 0.0;
  if (np > 0) out += pos / (1.0 + gamma) / static_cast<double>(np);
  if (nn > 0) out += gamma / (1.0 + gamma) * neg / static_cast<double>(nn);
  return out;
}

// One training example for the proposal head.
struct LossExample {
  int layer_id = 3;
  bool positive = false;
  double target_height = 0.0;
  Vec4 target{};  // encoded regression target; used only when positive
};

struct HeadOutput {
  double logit = 0.0;
  Vec4 regression{};
};

struct HeadGrad {
  double logit = 0.0;
  Vec4 regression{};
};

// cls_weight * CE + lambda * p * R(target - regression), with its gradient
// with respect to the head outputs. CE uses the clamped probability, so the
// gradient vanishes where clamping is active.
inline double multitask_loss(const LossExample& ex, const HeadOutput& out, double lambda, double cls_weight = 1.0,
                             double eps = 1e-7, HeadGrad* grad = nullptr) {
  const double p_raw = sigmoid(out.logit);
  const double p = clamp_prob(p_raw, eps);
  const bool clamped = p != p_raw;
  double loss = cls_weight * (ex.positive ? -std::log(p) : -std::log(1.0 - p));
  if (grad) {
    grad->logit = clamped ? 0.0 : cls_weight * (ex.positive ? p_raw - 1.0 : p_raw);
    grad->regression = {0.0, 0.0, 0.0, 0.0};
  }
  if (ex.positive) {
    Vec4 r;
    for (int k = 0; k < 4; ++k) r[static_cast<std::size_t>(k)] = ex.target[static_cast<std::size_t>(k)] - out.regression[static_cast<std::size_t>(k)];
    loss += lambda * smooth_l1(r);
    if (grad) {
      const Vec4 g = smooth_l1_grad(r);
      for (std::size_t k = 0; k < 4; ++k) grad->regression[k] = -lambda * g[k];
    }
  }
  return loss;
}

// Sum over layers and examples of alpha_m(h_i) * l^m_i. The classification
// weights follow the weighted cross-entropy, with positive and negative counts
// taken per layer. grads, when given, receives d objective / d outputs.
inline double total_objective(const std::vector<LossExample>& examples, const std::vector<HeadOutput>& outputs,
                              const LossConfig& cfg, std::vector<HeadGrad>* grads = nullptr) {
  if (examples.size() != outputs.size()) throw std::invalid_argument("one output per example required");
  std::map<int, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& e : examples) {
    auto& c = counts[e.layer_id];
    (e.positive ? c.first : c.second) += 1;
  }
  if (grads) grads->assign(examples.size(), HeadGrad{});
  double total = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& e = examples[i];
    const auto [np, nn] = counts[e.layer_id];
    const double w = e.positive ? 1.0 / ((1.0 + cfg.gamma) * static_cast<double>(np))
                                : cfg.gamma / ((1.0 + cfg.gamma) * static_cast<double>(nn));
    const double alpha = layer_weight(e.target_height, e.layer_id, cfg);
    HeadGrad g;
    total += alpha * multitask_loss(e, outputs[i], cfg.lambda, w, cfg.eps, grads ? &g : nullptr);
    if (grads) {
      (*grads)[i].logit = alpha * g.logit;
      for (std::size_t k = 0; k < 4; ++k) (*grads)[i].regression[k] = alpha * g.regression[k];
    }
  }
  return total;
}

// ---- proposal head ----

// Maps standardized pooled features to (objectness logit, 4 regression
// outputs). Linear when hidden == 0, otherwise one ReLU hidden layer.
struct ProposalHead {
  int layer_id = 3;
  int in_dim = 0;
  int hidden = 0;
  Eigen::VectorXd in_mean;   // input standardization, fixed before training
  Eigen::VectorXd in_scale;  // multiplies (x - in_mean)
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // 5 x (hidden ? hidden : in_dim)
  Eigen::VectorXd b2;

  struct Cache {
    Eigen::VectorXd x;
    Eigen::VectorXd pre;
    Eigen::VectorXd act;
  };

  HeadOutput forward(const Eigen::VectorXd& features, Cache* cache = nullptr) const {
    Eigen::VectorXd x = (features - in_mean).cwiseProduct(in_scale);
    Eigen::VectorXd out;
    if (hidden > 0) {
      Eigen::VectorXd pre = w1 * x + b1;
      Eigen::VectorXd act = pre.cwiseMax(0.0);
      out = w2 * act + b2;
      if (cache) {
        cache->pre = std::move(pre);
        cache->act = std::move(act);
      }
    } else {
      out = w2 * x + b2;
    }
    if (cache) cache->x = std::move(x);
    return {out[0], {out[1], out[2], out[3], out[4]}};
  }
};

struct HeadGradients {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  explicit HeadGradients(const ProposalHead& h)
      : w1(Eigen::MatrixXd::Zero(h.w1.rows(), h.w1.cols())),
        b1(Eigen::VectorXd::Zero(h.b1.size())),
        w2(Eigen::MatrixXd::Zero(h.w2.rows(), h.w2.cols())),
        b2(Eigen::VectorXd::Zero(h.b2.size())) {}
};

inline void head_backward(const ProposalHead& head, const ProposalHead::Cache& cache, const HeadGrad& g,
                          HeadGradients& acc) {
  Eigen::VectorXd d(5);
  d << g.logit, g.regression[0], g.regression[1], g.regression[2], g.regression[3];
  acc.b2 += d;
  if (head.hidden > 0) {
    acc.w2.noalias() += d * cache.act.transpose();
    Eigen::VectorXd dact = head.w2.transpose() * d;
    for (Eigen::Index i = 0; i < dact.size(); ++i)
      if (cache.pre[i] <= 0.0) dact[i] = 0.0;
    acc.b1 += dact;
    acc.w1.noalias() += dact * cache.x.transpose();
  } else {
    acc.w2.noalias() += d * cache.x.transpose();
  }
}

struct ProposalModel {
  PyramidConfig pyramid;
  AnchorConfig anchors;
  RegressionMode mode = RegressionMode::Raw;
  std::vector<ProposalHead> heads;  // pyramid layer order

  const ProposalHead& head(int layer_id) const { return heads[pyramid.index_of(layer_id)]; }
  ProposalHead& head(int layer_id) { return heads[pyramid.index_of(layer_id)]; }
};

inline ProposalModel init_proposal_model(const PyramidConfig& pyr, const AnchorConfig& anchors, RegressionMode mode,
                                         int hidden, std::uint64_t seed) {
  ProposalModel m;
  m.pyramid = pyr;
  m.anchors = anchors;
  m.mode = mode;
  Rng rng(derive_seed(seed, 0x9e0));
  for (const auto& l : pyr.layers) {
    ProposalHead h;
    h.layer_id = l.id;
    h.in_dim = pyr.feature_dim(l.id);
    h.hidden = hidden;
    h.in_mean = Eigen::VectorXd::Zero(h.in_dim);
    h.in_scale = Eigen::VectorXd::Ones(h.in_dim);
    const int mid = hidden > 0 ? hidden : h.in_dim;
    if (hidden > 0) {
      const double a = std::sqrt(6.0 / h.in_dim);
      h.w1 = Eigen::MatrixXd::NullaryExpr(hidden, h.in_dim, [&]() { return rng.uniform(-a, a); });
      h.b1 = Eigen::VectorXd::Zero(hidden);
      const double a2 = std::sqrt(6.0 / (hidden + 5));
      h.w2 = Eigen::MatrixXd::NullaryExpr(5, mid, [&]() { return rng.uniform(-a2, a2); });
    } else {
      h.w1 = Eigen::MatrixXd(0, h.in_dim);
      h.b1 = Eigen::VectorXd(0);
      h.w2 = Eigen::MatrixXd::Zero(5, mid);
    }
    h.b2 = Eigen::VectorXd::Zero(5);
    m.heads.push_back(std::move(h));
  }
  return m;
}

struct ScoredBox {
  BBox box;
  double objectness = 0.0;
  int layer_id = 3;
  std::size_t anchor_index = 0;
};

// Objectness and decoded, clipped box for every anchor whose layer passes the
// filter (all layers when the filter is empty).
inline std::vector<ScoredBox> score_proposals(const ProposalModel& model, const FeaturePyramid& pyr,
                                              const std::vector<Anchor>& anchors,
                                              const std::vector<int>& layer_filter = {}) {
  std::vector<ScoredBox> out;
  out.reserve(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const auto& a = anchors[i];
    if (!layer_filter.empty() && std::find(layer_filter.begin(), layer_filter.end(), a.layer_id) == layer_filter.end())
      continue;
    const BBox base = clip(a.box, pyr.extent);
    const HeadOutput o = model.head(a.layer_id).forward(roi_pool(pyr, a.layer_id, base, model.pyramid.roi_size));
    const BBox decoded = clip(decode_regression(base, o.regression, model.mode), pyr.extent);
    out.push_back({decoded, sigmoid(o.logit), a.layer_id, i});
  }
  return out;
}

// Highest objectness first; ties keep anchor order.
inline std::vector<ScoredBox> top_k(std::vector<ScoredBox> scored, std::size_t k) {
  k = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const ScoredBox& a, const ScoredBox& b) {
                      return a.objectness > b.objectness ||
                             (a.objectness == b.objectness && a.anchor_index < b.anchor_index);
                    });
  scored.resize(k);
  return scored;
}

// Walks proposals by descending objectness and keeps up to k of them, skipping
// any whose IoU with an already kept one exceeds nms_iou.
inline std::vector<ScoredBox> select_proposals(std::vector<ScoredBox> scored, std::size_t k, double nms_iou) {
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.objectness > b.objectness; });
  std::vector<ScoredBox> kept;
  kept.reserve(std::min(k, scored.size()));
  for (const auto& s : scored) {
    if (kept.size() >= k) break;
    if (nms_iou < 1.0 &&
        std::any_of(kept.begin(), kept.end(), [&](const ScoredBox& q) { return iou(q.box, s.box) > nms_iou; }))
      continue;
    kept.push_back(s);
  }
  return kept;
}

// ---- training ----

struct ProposalTrainConfig {
  int steps = 3000;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int hidden = 0;
  int top_k = 300;
  // Overlap above which a lower-scoring proposal is dropped when selecting the
  // top_k; 1 disables suppression.
  double nms_iou = 0.7;
  // Scenes used to estimate the input standardization, and the expected
  // squared norm of a standardized input.
  int stats_scenes = 50;
  double input_norm = 1.0;
  // Restrict anchors (training and scoring) to these layers; empty = all.
  std::vector<int> layers;

  void validate() const {
    if (steps < 1) throw ConfigError("proposal_train.steps must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("proposal_train.lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("proposal_train.momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("proposal_train.weight_decay must be >= 0");
    if (hidden < 0) throw ConfigError("proposal_train.hidden must be >= 0");
    if (top_k < 0) throw ConfigError("proposal_train.top_k must be >= 0");
    if (!(input_norm > 0.0)) throw ConfigError("proposal_train.input_norm must be positive");
    if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("proposal_train.nms_iou must be in (0, 1]");
  }
};

// Per-image inputs the trainer needs; supplied by the caller so pyramids can be
// cached or streamed.
struct TrainingImage {
  const FeaturePyramid* pyramid = nullptr;
  std::vector<BBox> gts;
};

struct ProposalLogEntry {
  int step = 0;
  double objective = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

namespace detail {

inline bool layer_enabled(const std::vector<int>& filter, int layer_id) {
  return filter.empty() || std::find(filter.begin(), filter.end(), layer_id) != filter.end();
}

inline std::vector<Anchor> filter_anchors(const std::vector<Anchor>& anchors, const std::vector<int>& filter) {
  if (filter.empty()) return anchors;
  std::vector<Anchor> out;
  for (const auto& a : anchors)
    if (layer_enabled(filter, a.layer_id)) out.push_back(a);
  return out;
}

inline void fit_standardization(ProposalModel& model, const std::vector<Anchor>& anchors,
                                const std::function<TrainingImage(std::size_t)>& image_at, std::size_t n_images,
                                int stats_scenes, double input_norm) {
  const std::size_t n = std::min<std::size_t>(n_images, static_cast<std::size_t>(std::max(1, stats_scenes)));
  for (auto& head : model.heads) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(head.in_dim), sq = Eigen::VectorXd::Zero(head.in_dim);
    double count = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const TrainingImage img = image_at(s);
      for (std::size_t i = 0; i < anchors.size(); i += 7) {
        if (anchors[i].layer_id != head.layer_id) continue;
        const Eigen::VectorXd f =
            roi_pool(*img.pyramid, head.layer_id, clip(anchors[i].box, img.pyramid->extent), model.pyramid.roi_size);
        sum += f;
        sq += f.cwiseProduct(f);
        count += 1.0;
      }
    }
    if (count == 0.0) continue;
    head.in_mean = sum / count;
    Eigen::VectorXd var = (sq / count - head.in_mean.cwiseProduct(head.in_mean)).cwiseMax(0.0);
    // Unit variance per feature, then a common factor so a typical input has
    // squared norm input_norm whatever the channel count.
    head.in_scale = var.cwiseSqrt().cwiseMax(1e-3).cwiseInverse() *
                    std::sqrt(input_norm / static_cast<double>(head.in_dim));
  }
}

}  // namespace detail

// Mini-batch SGD with momentum and weight decay over one randomly chosen image
// per step. Negatives are uniform during the first pass over the images and
// hard (highest current objectness) afterwards.
inline ProposalModel train_proposal_model(ProposalModel model, const std::vector<Anchor>& all_anchors,
                                          const std::function<TrainingImage(std::size_t)>& image_at,
                                          std::size_t n_images, const LossConfig& loss_cfg,
                                          const ProposalTrainConfig& cfg, std::uint64_t seed,
                                          std::vector<ProposalLogEntry>* log = nullptr) {
  if (n_images == 0) throw std::invalid_argument("training needs at least one image");
  cfg.validate();
  loss_cfg.validate();
  const std::vector<Anchor> anchors = detail::filter_anchors(all_anchors, cfg.layers);
  if (anchors.empty()) throw ConfigError("no anchors left after layer filter");
  detail::fit_standardization(model, anchors, image_at, n_images, cfg.stats_scenes, cfg.input_norm);

  std::vector<HeadGradients> velocity;
  for (const auto& h : model.heads) velocity.emplace_back(h);
  Rng rng(derive_seed(seed, 0x7a1));

  for (int step = 0; step < cfg.steps; ++step) {
    const std::size_t img_index = rng.index(n_images);
    const TrainingImage img = image_at(img_index);
    const FeaturePyramid& pyr = *img.pyramid;
    const auto labeled = label_anchors(anchors, img.gts, pyr.extent, model.anchors);

    std::optional<std::vector<double>> scores;
    if (static_cast<std::size_t>(step) >= n_images) {
      scores.emplace(labeled.size(), 0.0);
      for (std::size_t i = 0; i < labeled.size(); ++i) {
        if (labeled[i].label != Label::Negative) continue;
        const auto& a = labeled[i].anchor;
        (*scores)[i] = model.head(a.layer_id)
                           .forward(roi_pool(pyr, a.layer_id, clip(a.box, pyr.extent), model.pyramid.roi_size))
                           .logit;
      }
    }
    const Minibatch batch = sample_minibatch(labeled, scores, model.anchors.gamma, model.anchors.pos_count, rng);

    std::vector<std::size_t> members = batch.positives;
    members.insert(members.end(), batch.negatives.begin(), batch.negatives.end());
    std::vector<LossExample> examples;
    std::vector<HeadOutput> outputs;
    std::vector<ProposalHead::Cache> caches(members.size());
    for (std::size_t j = 0; j < members.size(); ++j) {
      const auto& la = labeled[members[j]];
      const BBox base = clip(la.anchor.box, pyr.extent);
      LossExample ex;
      ex.layer_id = la.anchor.layer_id;
      ex.positive = la.label == Label::Positive;
      ex.target_height = la.target_height;
      if (ex.positive) ex.target = encode_regression(base, img.gts[static_cast<std::size_t>(la.matched)], model.mode);
      examples.push_back(ex);
      outputs.push_back(model.head(ex.layer_id)
                            .forward(roi_pool(pyr, ex.layer_id, base, model.pyramid.roi_size), &caches[j]));
    }
    std::vector<HeadGrad> grads;
    const double objective = total_objective(examples, outputs, loss_cfg, &grads);
    if (!std::isfinite(objective)) {
      throw DivergenceError("proposal objective became non-finite at step " + std::to_string(step) + " (image " +
                            std::to_string(img_index) + ")");
    }
    std::vector<HeadGradients> acc;
    for (const auto& h : model.heads) acc.emplace_back(h);
    for (std::size_t j = 0; j < members.size(); ++j) {
      const std::size_t li = model.pyramid.index_of(examples[j].layer_id);
      head_backward(model.heads[li], caches[j], grads[j], acc[li]);
    }
    for (std::size_t li = 0; li < model.heads.size(); ++li) {
      auto& h = model.heads[li];
      auto& v = velocity[li];
      auto& g = acc[li];
      auto update = [&](auto& param, auto& vel, const auto& grad) {
        vel = cfg.momentum * vel - cfg.lr * (grad + cfg.weight_decay * param);
        param += vel;
      };
      update(h.w2, v.w2, g.w2);
      update(h.b2, v.b2, g.b2);
      if (h.hidden > 0) {
        update(h.w1, v.w1, g.w1);
        update(h.b1, v.b1, g.b1);
      }
      if (!h.w2.allFinite() || !h.b2.allFinite()) {
        throw DivergenceError("proposal head " + std::to_string(h.layer_id) + " has non-finite weights at step " +
                              std::to_string(step));
      }
    }
    if (log) log->push_back({step, objective, batch.positives.size(), batch.negatives.size()});
  }
  return model;
}

}  // namespace scaleloc
