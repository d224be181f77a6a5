#include "train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "common/errors.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"

namespace fds::train {

void adamw_step(ParameterSet& params, std::span<const std::vector<double>> grads, AdamWState& state,
                const AdamWConfig& cfg) {
  const auto ids = params.ids();
  if (grads.size() != ids.size()) throw ShapeError("adamw_step: one gradient per parameter expected");
  if (state.m.empty()) {
    state.m.resize(ids.size());
    state.v.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      state.m[i].assign(params.values(ids[i]).size(), 0.0);
      state.v[i].assign(params.values(ids[i]).size(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto w = params.mutable_values(ids[i]);
    const auto& g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (g.size() != w.size() || m.size() != w.size())
      throw ShapeError("adamw_step: gradient size mismatch for " + params.name(ids[i]));
    for (std::size_t k = 0; k < w.size(); ++k) {
      w[k] -= cfg.lr * cfg.weight_decay * w[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      w[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

model::EncoderConfig encoder_preset(const std::string& name) {
  model::EncoderConfig e;
  if (name == "default") return e;
  if (name == "toy") {
    e.c0 = 8;
    e.dims = {8, 16, 32, 64};
    e.state = 4;
    return e;
  }
  throw UsageError("unknown model preset '" + name + "' (expected default or toy)");
}

void TrainConfig::validate() const {
  if (batch_size == 0 || accumulation_steps == 0) throw UsageError("batch_size and accumulation_steps must be positive");
  if (!(lr > 0) || !(weight_decay > 0)) throw UsageError("lr and weight_decay must be positive");
  if (wiring < 0 || wiring > 4) throw UsageError("wiring must be 0..4");
  encoder_preset(preset);
}

model::ModelConfig TrainConfig::model_config() const {
  model::ModelConfig m;
  m.encoder = encoder_preset(preset);
  m.wiring = model::ablation_wiring(wiring);
  m.seed = derive_seed(seed, "init");
  return m;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"accumulation_steps", c.accumulation_steps},
          {"effective_batch", c.effective_batch()},
          {"max_steps", c.max_steps},
          {"seed", c.seed},
          {"loss", loss::loss_config_to_json(c.loss)},
          {"wiring", c.wiring},
          {"wiring_tasks", model::wiring_to_json(model::ablation_wiring(c.wiring))},
          {"preset", c.preset},
          {"augment", c.augment},
          {"shuffle", c.shuffle},
          {"building_weights", c.building_weights},
          {"threads", c.threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw UsageError("train config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "lr") c.lr = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "accumulation_steps") c.accumulation_steps = v.get<std::size_t>();
      else if (key == "max_steps") c.max_steps = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "loss") c.loss = loss::loss_config_from_json(v, c.loss);
      else if (key == "wiring") c.wiring = v.get<int>();
      else if (key == "preset") c.preset = v.get<std::string>();
      else if (key == "augment") c.augment = v.get<bool>();
      else if (key == "shuffle") c.shuffle = v.get<bool>();
      else if (key == "building_weights") c.building_weights = v.get<bool>();
      else if (key == "threads") c.threads = v.get<unsigned>();
      else if (key == "effective_batch" || key == "wiring_tasks") continue;  // derived, written for readers
      else throw UsageError("unknown train config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::size_t> building_counts(std::span<const data::ChipSample> chips) {
  std::vector<std::size_t> counts(model::task_classes(model::Task::Bda), 0);
  for (const auto& s : chips) {
    const std::size_t H = s.grid.height, W = s.grid.width;
    std::vector<bool> seen(H * W, false);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < H * W; ++start) {
      if (seen[start] || s.loc.data[start] != 1) continue;
      int cls = -1;
      seen[start] = true;
      stack.assign(1, start);
      while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        if (s.bda.data[p] != geo::kNoData) cls = std::max<int>(cls, s.bda.data[p]);
        const std::size_t r = p / W, c = p % W;
        auto visit = [&](std::size_t q) {
          if (!seen[q] && s.loc.data[q] == 1) {
            seen[q] = true;
            stack.push_back(q);
          }
        };
        if (r > 0) visit(p - W);
        if (r + 1 < H) visit(p + W);
        if (c > 0) visit(p - 1);
        if (c + 1 < W) visit(p + 1);
      }
      if (cls >= 0) ++counts[static_cast<std::size_t>(cls)];
    }
  }
  return counts;
}

namespace {

struct SampleGrad {
  double loss = 0;
  std::vector<std::vector<double>> grads;
};

data::Batch single(const data::ChipSample& s) { return data::to_batch(std::span<const data::ChipSample>(&s, 1)); }

SampleGrad sample_gradient(const model::FloodDamageNet& net, const data::ChipSample& s, const loss::LossConfig& cfg) {
  const auto batch = single(s);
  const ParamBinding binding(net.params(), true);
  const auto outputs = net.forward(binding, batch.inputs);
  for (auto t : model::kTasks)
    if (const auto& o = outputs.get(t))
      for (double v : o->values())
        if (!std::isfinite(v))
          throw NumericError(std::string("non-finite ") + model::task_name(t) + " logits on chip '" + s.id + "'");
  Tensor l = loss::composite_loss(outputs, batch.labels, cfg);
  SampleGrad out;
  out.loss = l.item();
  if (!std::isfinite(out.loss)) throw NumericError("non-finite training loss on chip '" + s.id + "'");
  l.backward();
  for (auto id : net.params().ids()) out.grads.push_back(binding.grad(id));
  return out;
}

}  // namespace

StepResult accumulate_gradients(const model::FloodDamageNet& net, std::span<const data::ChipSample> samples,
                                std::size_t batch_size, const loss::LossConfig& loss, unsigned threads) {
  if (batch_size == 0 || samples.empty() || samples.size() % batch_size != 0)
    throw UsageError("effective batch must be a positive multiple of batch_size");
  const std::size_t accum = samples.size() / batch_size;
  std::vector<SampleGrad> per(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) { per[i] = sample_gradient(net, samples[i], loss); });

  StepResult out;
  const auto ids = net.params().ids();
  out.grads.resize(ids.size());
  for (std::size_t p = 0; p < ids.size(); ++p) out.grads[p].assign(net.params().values(ids[p]).size(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch_size), inv_a = 1.0 / static_cast<double>(accum);
  std::vector<std::vector<double>> micro(ids.size());
  for (std::size_t a = 0; a < accum; ++a) {
    double micro_loss = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) micro[p].assign(out.grads[p].size(), 0.0);
    for (std::size_t i = a * batch_size; i < (a + 1) * batch_size; ++i) {
      micro_loss += per[i].loss;
      for (std::size_t p = 0; p < ids.size(); ++p)
        for (std::size_t k = 0; k < micro[p].size(); ++k) micro[p][k] += per[i].grads[p][k];
    }
    out.loss += micro_loss * inv_b * inv_a;
    for (std::size_t p = 0; p < ids.size(); ++p)
      for (std::size_t k = 0; k < micro[p].size(); ++k) out.grads[p][k] += micro[p][k] * inv_b * inv_a;
  }
  for (const auto& g : out.grads)
    for (double v : g)
      if (!std::isfinite(v)) throw NumericError("non-finite gradient");
  return out;
}

double dataset_loss(const model::FloodDamageNet& net, std::span<const data::ChipSample> chips,
                    const loss::LossConfig& loss, unsigned threads) {
  if (chips.empty()) throw UsageError("dataset_loss: no chips");
  std::vector<double> per(chips.size());
  parallel_for(chips.size(), threads, [&](std::size_t i) {
    const auto batch = single(chips[i]);
    per[i] = loss::composite_loss(net.forward(batch.inputs), batch.labels, loss).item();
  });
  double sum = 0;
  for (double v : per) sum += v;
  return sum / static_cast<double>(chips.size());
}

double block_constant_floor(std::span<const data::ChipSample> chips, const loss::LossConfig& loss,
                            std::size_t block) {
  if (chips.empty() || block == 0) throw UsageError("block_constant_floor: no chips or zero block");
  double total = 0;
  for (const auto& s : chips) {
    for (auto t : model::kTasks) {
      const auto& layer = t == model::Task::Bda ? s.bda : t == model::Task::Fm ? s.fm : s.loc;
      const std::size_t K = model::task_classes(t);
      const auto& cfg = loss[t];
      auto weight = [&](std::size_t k) { return cfg.weights.empty() ? 1.0 : cfg.weights.at(k); };
      double ce = 0;
      std::size_t valid = 0;
      for (std::size_t r0 = 0; r0 < s.grid.height; r0 += block)
        for (std::size_t c0 = 0; c0 < s.grid.width; c0 += block) {
          std::vector<double> n(K, 0.0);
          for (std::size_t r = r0; r < std::min(r0 + block, s.grid.height); ++r)
            for (std::size_t c = c0; c < std::min(c0 + block, s.grid.width); ++c) {
              const auto v = layer.at(0, r, c);
              if (v == geo::kNoData) continue;
              n[v] += 1;
              ++valid;
            }
          double z = 0;
          for (std::size_t k = 0; k < K; ++k) z += weight(k) * n[k];
          for (std::size_t k = 0; k < K; ++k)
            if (weight(k) * n[k] > 0) ce -= weight(k) * n[k] * std::log(weight(k) * n[k] / z);
        }
      if (valid > 0) total += cfg.lambda_ce * ce / static_cast<double>(valid);
    }
  }
  return total / static_cast<double>(chips.size());
}

Trainer::Trainer(model::FloodDamageNet& net, TrainConfig cfg) : net_(net), cfg_(std::move(cfg)), loss_(cfg_.loss) {
  cfg_.validate();
}

bool Trainer::finished() const {
  return epoch_ >= cfg_.epochs || (cfg_.max_steps != 0 && state_.step >= cfg_.max_steps);
}

void Trainer::freeze_class_weights(std::span<const data::ChipSample> samples) {
  if (weights_frozen_) return;
  auto& bda = loss_[model::Task::Bda];
  if (cfg_.building_weights && bda.weights.empty()) {
    const auto counts = building_counts(samples);
    if (std::any_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }))
      bda.weights = loss::class_weights(counts);
  }
  weights_frozen_ = true;
}

std::vector<TracePoint> Trainer::train_epoch(std::span<const data::ChipSample> samples) {
  const std::size_t eff = cfg_.effective_batch();
  if (samples.size() < eff)
    throw UsageError("training set has " + std::to_string(samples.size()) + " chips, fewer than one effective batch of " +
                     std::to_string(eff));
  freeze_class_weights(samples);

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (cfg_.shuffle) {
    Rng rng(derive_seed(derive_seed(cfg_.seed, "order"), epoch_));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  }

  const AdamWConfig opt{cfg_.lr, cfg_.weight_decay};
  std::vector<TracePoint> trace;
  std::vector<data::ChipSample> drawn(eff);
  for (std::size_t start = 0; start + eff <= order.size(); start += eff) {
    if (cfg_.max_steps != 0 && state_.step >= cfg_.max_steps) break;
    for (std::size_t j = 0; j < eff; ++j) {
      const auto& s = samples[order[start + j]];
      if (cfg_.augment) {
        Rng rng(derive_seed(derive_seed(cfg_.seed, "augment"), state_.step * eff + j));
        drawn[j] = data::augment(s, rng);
      } else {
        drawn[j] = s;
      }
    }
    auto r = accumulate_gradients(net_, drawn, cfg_.batch_size, loss_, cfg_.threads);
    adamw_step(net_.params(), r.grads, state_, opt);
    trace.push_back({static_cast<std::size_t>(state_.step), epoch_, r.loss});
  }
  ++epoch_;
  return trace;
}

std::vector<TracePoint> Trainer::fit(std::span<const data::ChipSample> samples) {
  std::vector<TracePoint> trace;
  while (!finished()) {
    auto t = train_epoch(samples);
    trace.insert(trace.end(), t.begin(), t.end());
  }
  return trace;
}

namespace {

geo::LabelRaster argmax_raster(const Tensor& logits, const geo::GridSpec& grid) {
  const std::size_t K = logits.dim(3), P = logits.dim(1) * logits.dim(2);
  const auto v = logits.values();
  geo::LabelRaster r{grid, std::vector<std::uint8_t>(P)};
  for (std::size_t p = 0; p < P; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (v[p * K + k] > v[p * K + best]) best = k;
    r.values[p] = static_cast<std::uint8_t>(best);
  }
  return r;
}

struct ChipEval {
  Prediction pred;
  double loss = 0;
};

ChipEval eval_chip(const model::FloodDamageNet& net, const data::ChipSample& s, const loss::LossConfig& cfg) {
  const auto batch = single(s);
  const auto out = net.forward(batch.inputs);
  ChipEval e;
  e.loss = loss::composite_loss(out, batch.labels, cfg).item();
  if (out.bda) e.pred.bda = argmax_raster(*out.bda, s.grid);
  if (out.fm) e.pred.fm = argmax_raster(*out.fm, s.grid);
  if (out.loc) e.pred.loc = argmax_raster(*out.loc, s.grid);
  return e;
}

std::vector<ChipEval> eval_chips(const model::FloodDamageNet& net, std::span<const data::ChipSample> chips,
                                 const loss::LossConfig& cfg, unsigned threads) {
  std::vector<ChipEval> out(chips.size());
  parallel_for(chips.size(), threads, [&](std::size_t i) { out[i] = eval_chip(net, chips[i], cfg); });
  return out;
}

const std::optional<geo::LabelRaster>& head(const Prediction& p, model::Task t) {
  return t == model::Task::Bda ? p.bda : t == model::Task::Fm ? p.fm : p.loc;
}

const data::ByteRaster& truth_layer(const data::ChipSample& s, model::Task t) {
  return t == model::Task::Bda ? s.bda : t == model::Task::Fm ? s.fm : s.loc;
}

std::set<std::size_t> excluded(model::Task t) {
  return t == model::Task::Fm ? std::set<std::size_t>{} : std::set<std::size_t>{0};
}

}  // namespace

std::vector<Prediction> predict(const model::FloodDamageNet& net, std::span<const data::ChipSample> chips,
                                unsigned threads) {
  std::vector<Prediction> out(chips.size());
  parallel_for(chips.size(), threads, [&](std::size_t i) {
    const auto batch = single(chips[i]);
    const auto o = net.forward(batch.inputs);
    if (o.bda) out[i].bda = argmax_raster(*o.bda, chips[i].grid);
    if (o.fm) out[i].fm = argmax_raster(*o.fm, chips[i].grid);
    if (o.loc) out[i].loc = argmax_raster(*o.loc, chips[i].grid);
  });
  return out;
}

EvalReport evaluate(const model::FloodDamageNet& net, std::span<const data::ChipSample> chips,
                    const loss::LossConfig& loss, const BuildingTruth* truth, damage::Stat stat, unsigned threads) {
  if (chips.empty()) throw UsageError("evaluate: no chips");
  const auto evals = eval_chips(net, chips, loss, threads);
  EvalReport r;
  r.chips = chips.size();
  for (const auto& e : evals) r.loss += e.loss;
  r.loss /= static_cast<double>(chips.size());

  for (auto t : model::kTasks) {
    if (!net.has_decoder(t)) continue;
    metrics::ConfusionMatrix cm(model::task_classes(t));
    for (std::size_t i = 0; i < chips.size(); ++i)
      cm.merge(metrics::ConfusionMatrix::from(truth_layer(chips[i], t).data, head(evals[i].pred, t)->values,
                                              model::task_classes(t)));
    r.pixel.emplace(model::task_name(t), metrics::evaluate(cm, excluded(t)));
  }

  if (truth && net.has_decoder(model::Task::Bda)) {
    std::vector<geo::LabelRaster> rasters;
    for (const auto& e : evals) rasters.push_back(*e.pred.bda);
    // Only buildings the evaluated chips reach are scored.
    std::vector<geo::Footprint> covered;
    for (const auto& f : truth->footprints) {
      const auto b = f.polygon.bbox();
      if (std::any_of(chips.begin(), chips.end(), [&](const data::ChipSample& c) { return b.intersects(c.grid.extent()); }))
        covered.push_back(f);
    }
    const auto records = damage::aggregate(rasters, covered, stat, {}, threads);
    std::vector<std::uint8_t> gt, pred;
    for (const auto& rec : records) {
      const auto it = truth->classes.find(rec.footprint_id);
      if (it == truth->classes.end()) continue;
      if (!rec.damage_class) {
        ++r.buildings_without_prediction;
        continue;
      }
      gt.push_back(it->second);
      pred.push_back(*rec.damage_class);
    }
    if (!gt.empty())
      r.building = metrics::building_level_metrics(gt, pred, model::task_classes(model::Task::Bda), {0});
  }
  return r;
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json pixel = nlohmann::json::object();
  for (const auto& [name, m] : r.pixel) pixel[name] = metrics::to_json(m);
  return {{"chips", r.chips},
          {"loss", r.loss},
          {"pixel", pixel},
          {"building", r.building ? metrics::to_json(*r.building) : nlohmann::json(nullptr)},
          {"buildings_without_prediction", r.buildings_without_prediction}};
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TracePoint> trace) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "step,epoch,loss\n";
  char buf[64];
  for (const auto& t : trace) {
    const int n = std::snprintf(buf, sizeof buf, "%.17g", t.loss);
    out << t.step << ',' << t.epoch << ',' << std::string_view(buf, static_cast<std::size_t>(n)) << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace fds::train
