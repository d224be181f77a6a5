#include "loss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "common/compensated.hpp"
#include "common/errors.hpp"

namespace fds::loss {

using model::Task;

std::vector<double> class_weights(std::span<const std::size_t> counts) {
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total == 0) throw DataError("class_weights: no labelled instances");
  std::vector<double> w(counts.size(), 0.0);
  for (std::size_t k = 0; k < counts.size(); ++k)
    if (counts[k] > 0) w[k] = static_cast<double>(total) / static_cast<double>(counts[k]);
  return w;
}

nlohmann::json loss_config_to_json(const LossConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (auto t : model::kTasks) {
    const auto& tc = c[t];
    j[model::task_name(t)] = {{"lambda_ce", tc.lambda_ce}, {"lambda_lov", tc.lambda_lov}, {"weights", tc.weights}};
  }
  return j;
}

LossConfig loss_config_from_json(const nlohmann::json& j, LossConfig base) {
  if (!j.is_object()) throw UsageError("loss config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    auto& tc = base[model::parse_task(key)];
    if (!v.is_object()) throw UsageError("loss config '" + key + "' must be an object");
    if (v.contains("lambda_ce")) tc.lambda_ce = v["lambda_ce"].get<double>();
    if (v.contains("lambda_lov")) tc.lambda_lov = v["lambda_lov"].get<double>();
    if (v.contains("weights")) tc.weights = v["weights"].get<std::vector<double>>();
    if (tc.lambda_ce < 0 || tc.lambda_lov < 0) throw UsageError("loss config '" + key + "': lambdas must be >= 0");
    for (double w : tc.weights)
      if (!(w >= 0)) throw UsageError("loss config '" + key + "': class weights must be >= 0");
  }
  return base;
}

void validate_labels(std::span<const std::uint8_t> labels, std::size_t classes) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kIgnore && labels[i] >= classes)
      throw DataError("label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) +
                      " is outside 0.." + std::to_string(classes - 1) + " and not 255");
}

namespace {

struct Layout {
  std::size_t B, P, K;  // samples, pixels per sample, classes
};

Layout layout(const char* what, const Tensor& t, std::span<const std::uint8_t> labels) {
  if (t.rank() != 4) throw ShapeError(std::string(what) + ": expected [B, H, W, K], got " + shape_string(t.shape()));
  const Layout l{t.dim(0), t.dim(1) * t.dim(2), t.dim(3)};
  if (labels.size() != l.B * l.P)
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(l.B * l.P) + " pixels");
  validate_labels(labels, l.K);
  return l;
}

std::vector<double> resolve_weights(std::span<const double> w, std::size_t K) {
  if (w.empty()) return std::vector<double>(K, 1.0);
  if (w.size() != K) throw ShapeError("class weights: " + std::to_string(w.size()) + " for " + std::to_string(K) + " classes");
  return {w.begin(), w.end()};
}

// Jaccard-extension gradient of a ground-truth indicator sorted by
// decreasing error.
std::vector<double> lovasz_grad(const std::vector<std::uint8_t>& gt_sorted) {
  const std::size_t n = gt_sorted.size();
  double gts = 0.0;
  for (auto g : gt_sorted) gts += g;
  std::vector<double> jac(n);
  double cum_fg = 0.0, cum_bg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cum_fg += gt_sorted[i];
    cum_bg += 1.0 - gt_sorted[i];
    jac[i] = 1.0 - (gts - cum_fg) / (gts + cum_bg);
  }
  for (std::size_t i = n; i-- > 1;) jac[i] -= jac[i - 1];
  return jac;
}

// Term value and d(term)/d(prob) for each pixel.
double lovasz_term(std::span<const double> probs, std::span<const std::uint8_t> gt, std::vector<double>* dprob) {
  const std::size_t n = probs.size();
  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = gt[i] ? 1.0 - probs[i] : probs[i];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
  std::vector<std::uint8_t> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = gt[order[i]];
  const auto jac = lovasz_grad(sorted);
  CompensatedSum v;
  for (std::size_t i = 0; i < n; ++i) {
    v += err[order[i]] * jac[i];
    if (dprob) (*dprob)[order[i]] = gt[order[i]] ? -jac[i] : jac[i];
  }
  return v.value();
}

}  // namespace

double lovasz_class_term(std::span<const double> class_probs, std::span<const std::uint8_t> labels,
                         std::uint8_t cls) {
  if (class_probs.size() != labels.size()) throw ShapeError("lovasz_class_term: size mismatch");
  std::vector<double> p;
  std::vector<std::uint8_t> gt;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnore) continue;
    p.push_back(class_probs[i]);
    gt.push_back(labels[i] == cls);
  }
  return p.empty() ? 0.0 : lovasz_term(p, gt, nullptr);
}

std::optional<Tensor> weighted_cross_entropy(const Tensor& logits, std::span<const std::uint8_t> labels,
                                             std::span<const double> weights) {
  const auto l = layout("weighted_cross_entropy", logits, labels);
  const auto w = resolve_weights(weights, l.K);
  auto x = logits.values();
  // probs kept for the backward pass; scale[b] = 1 / (B * M_b).
  auto probs = std::make_shared<std::vector<double>>(x.size());
  auto scale = std::make_shared<std::vector<double>>(l.B, 0.0);
  double total = 0.0;
  bool any = false;
  for (std::size_t b = 0; b < l.B; ++b) {
    std::size_t valid = 0;
    CompensatedSum acc;
    for (std::size_t j = 0; j < l.P; ++j) {
      const std::size_t pix = b * l.P + j;
      const double* row = x.data() + pix * l.K;
      const double mx = *std::max_element(row, row + l.K);
      double z = 0.0;
      for (std::size_t k = 0; k < l.K; ++k) z += std::exp(row[k] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < l.K; ++k) (*probs)[pix * l.K + k] = std::exp(row[k] - lse);
      if (labels[pix] == kIgnore) continue;
      ++valid;
      acc += w[labels[pix]] * (lse - row[labels[pix]]);
    }
    if (valid == 0) continue;
    any = true;
    (*scale)[b] = 1.0 / (static_cast<double>(l.B) * static_cast<double>(valid));
    total += acc.value() * (*scale)[b];
  }
  if (!any) return std::nullopt;
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  return make_op("weighted_cross_entropy", {}, {total}, {logits},
                 [l, w, probs, scale, lab = std::move(lab)](BackwardContext& ctx) {
                   const double g = ctx.out_grad()[0];
                   auto gx = ctx.grad(0);
                   for (std::size_t pix = 0; pix < l.B * l.P; ++pix) {
                     const auto y = lab[pix];
                     if (y == kIgnore) continue;
                     const double s = g * w[y] * (*scale)[pix / l.P];
                     for (std::size_t k = 0; k < l.K; ++k)
                       gx[pix * l.K + k] += s * ((*probs)[pix * l.K + k] - (k == y ? 1.0 : 0.0));
                   }
                 });
}

std::optional<Tensor> lovasz_softmax(const Tensor& probs, std::span<const std::uint8_t> labels,
                                     std::span<const double> weights) {
  const auto l = layout("lovasz_softmax", probs, labels);
  const auto w = resolve_weights(weights, l.K);
  auto pv = probs.values();
  auto dprob = std::make_shared<std::vector<double>>(pv.size(), 0.0);
  double total = 0.0;
  bool any = false;
  for (std::size_t b = 0; b < l.B; ++b) {
    std::vector<std::size_t> valid;
    std::vector<bool> present(l.K, false);
    for (std::size_t j = 0; j < l.P; ++j) {
      const auto y = labels[b * l.P + j];
      if (y == kIgnore) continue;
      valid.push_back(b * l.P + j);
      if (w[y] > 0) present[y] = true;
    }
    if (valid.empty()) continue;
    any = true;
    double wsum = 0.0;
    std::size_t npresent = 0;
    for (std::size_t c = 0; c < l.K; ++c)
      if (present[c]) {
        wsum += w[c];
        ++npresent;
      }
    if (npresent == 0) continue;
    std::vector<double> p(valid.size()), d(valid.size());
    std::vector<std::uint8_t> gt(valid.size());
    for (std::size_t c = 0; c < l.K; ++c) {
      if (!present[c]) continue;
      // mean over present classes of (w_c / mean_w) * term = sum w_c term / sum w.
      const double coef = w[c] / wsum / static_cast<double>(l.B);
      for (std::size_t i = 0; i < valid.size(); ++i) {
        p[i] = pv[valid[i] * l.K + c];
        gt[i] = labels[valid[i]] == c;
      }
      total += coef * lovasz_term(p, gt, &d);
      for (std::size_t i = 0; i < valid.size(); ++i) (*dprob)[valid[i] * l.K + c] += coef * d[i];
    }
  }
  if (!any) return std::nullopt;
  return make_op("lovasz_softmax", {}, {total}, {probs}, [dprob](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0];
    auto gx = ctx.grad(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * (*dprob)[i];
  });
}

std::optional<Tensor> task_loss(const Tensor& logits, std::span<const std::uint8_t> labels,
                                const TaskLossConfig& cfg) {
  auto ce = weighted_cross_entropy(logits, labels, cfg.weights);
  if (!ce) return std::nullopt;
  Tensor total = scale(*ce, cfg.lambda_ce);
  if (cfg.lambda_lov != 0.0)
    if (auto lov = lovasz_softmax(softmax(logits), labels, cfg.weights)) total = add(total, scale(*lov, cfg.lambda_lov));
  return total;
}

Tensor composite_loss(const model::TaskOutputs& out, const TaskLabels& labels, const LossConfig& cfg) {
  Tensor total;
  for (auto t : model::kTasks) {
    const auto& logits = out.get(t);
    if (!logits || labels[t].empty()) continue;
    auto term = task_loss(*logits, labels[t], cfg[t]);
    if (!term) continue;
    total = total.defined() ? add(total, *term) : *term;
  }
  return total.defined() ? total : Tensor::scalar(0.0);
}

}  // namespace fds::loss
