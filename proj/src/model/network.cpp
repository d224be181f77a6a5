#include "model/network.hpp"

#include <algorithm>

#include "common/errors.hpp"

namespace fds::model {

const char* stream_name(Stream s) {
  switch (s) {
    case Stream::Pre: return "pre";
    case Stream::Post: return "post";
    case Stream::Vhr: return "vhr";
    case Stream::Risk: return "risk";
  }
  return "?";
}

const char* task_name(Task t) {
  switch (t) {
    case Task::Bda: return "bda";
    case Task::Fm: return "fm";
    case Task::Loc: return "loc";
  }
  return "?";
}

Stream parse_stream(const std::string& s) {
  for (auto v : kStreamOrder)
    if (s == stream_name(v)) return v;
  throw UsageError("unknown stream '" + s + "' (expected pre, post, vhr or risk)");
}

Task parse_task(const std::string& s) {
  for (auto v : kTasks)
    if (s == task_name(v)) return v;
  throw UsageError("unknown task '" + s + "' (expected bda, fm or loc)");
}

std::size_t task_classes(Task t) {
  switch (t) {
    case Task::Bda: return 4;
    case Task::Fm: return 3;
    case Task::Loc: return 2;
  }
  return 0;
}

namespace {

std::vector<Stream> canonical(std::vector<Stream> s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

}  // namespace

std::vector<Stream> TaskWiring::resolve(bool vhr_present) const {
  std::vector<Stream> out;
  for (auto s : canonical(streams))
    if (s != Stream::Vhr || vhr_present) out.push_back(s);
  if (!out.empty()) return out;
  for (auto s : canonical(fallback))
    if (s != Stream::Vhr || vhr_present) out.push_back(s);
  if (out.empty())
    throw DataError(std::string("task ") + task_name(task) + ": no available input stream");
  return out;
}

const std::optional<TaskWiring>& Wiring::get(Task t) const {
  switch (t) {
    case Task::Bda: return bda;
    case Task::Fm: return fm;
    case Task::Loc: break;
  }
  return loc;
}

std::optional<TaskWiring>& Wiring::get(Task t) {
  return const_cast<std::optional<TaskWiring>&>(std::as_const(*this).get(t));
}

bool Wiring::uses(Stream s) const {
  for (auto t : kTasks) {
    const auto& w = get(t);
    if (!w) continue;
    if (std::count(w->streams.begin(), w->streams.end(), s) || std::count(w->fallback.begin(), w->fallback.end(), s))
      return true;
  }
  return false;
}

Wiring ablation_wiring(int row) {
  using S = Stream;
  Wiring w;
  switch (row) {
    case 0:
      w.loc = TaskWiring{Task::Loc, {S::Pre}, {}};
      w.bda = TaskWiring{Task::Bda, {S::Pre, S::Post}, {}};
      break;
    case 1:
      w.loc = TaskWiring{Task::Loc, {S::Pre}, {}};
      w.bda = TaskWiring{Task::Bda, {S::Pre, S::Post}, {}};
      w.fm = TaskWiring{Task::Fm, {S::Pre, S::Post}, {}};
      break;
    case 2:
      w.loc = TaskWiring{Task::Loc, {S::Vhr}, {S::Pre}};
      w.bda = TaskWiring{Task::Bda, {S::Pre, S::Post, S::Risk}, {}};
      w.fm = TaskWiring{Task::Fm, {S::Pre, S::Post}, {}};
      break;
    case 3:
      w.loc = TaskWiring{Task::Loc, {S::Pre}, {}};
      w.bda = TaskWiring{Task::Bda, {S::Pre, S::Post, S::Risk}, {}};
      w.fm = TaskWiring{Task::Fm, {S::Pre, S::Post}, {}};
      break;
    case 4:
      w.loc = TaskWiring{Task::Loc, {S::Pre, S::Vhr}, {}};
      w.bda = TaskWiring{Task::Bda, {S::Pre, S::Post, S::Vhr, S::Risk}, {}};
      w.fm = TaskWiring{Task::Fm, {S::Pre, S::Post}, {}};
      break;
    default: throw UsageError("ablation row must be 0..4, got " + std::to_string(row));
  }
  return w;
}

nlohmann::json wiring_to_json(const Wiring& w) {
  nlohmann::json tasks = nlohmann::json::object();
  for (auto t : kTasks) {
    const auto& tw = w.get(t);
    if (!tw) {
      tasks[task_name(t)] = nullptr;
      continue;
    }
    nlohmann::json streams = nlohmann::json::array(), fallback = nlohmann::json::array();
    for (auto s : canonical(tw->streams)) streams.push_back(stream_name(s));
    for (auto s : canonical(tw->fallback)) fallback.push_back(stream_name(s));
    tasks[task_name(t)] = {{"streams", streams}, {"fallback", fallback}};
  }
  return {{"tasks", tasks}};
}

Wiring wiring_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("wiring must be a JSON object");
  if (j.contains("row") && !j.contains("tasks")) {
    if (!j["row"].is_number_integer()) throw UsageError("wiring 'row' must be an integer");
    return ablation_wiring(j["row"].get<int>());
  }
  if (!j.contains("tasks") || !j["tasks"].is_object()) throw UsageError("wiring needs 'row' or a 'tasks' object");
  Wiring w;
  for (const auto& [key, spec] : j["tasks"].items()) {
    const Task t = parse_task(key);
    if (spec.is_null()) continue;
    if (!spec.is_object() || !spec.contains("streams") || !spec["streams"].is_array())
      throw UsageError("wiring task '" + key + "' needs a 'streams' array");
    TaskWiring tw{t, {}, {}};
    for (const auto& s : spec["streams"]) tw.streams.push_back(parse_stream(s.get<std::string>()));
    if (spec.contains("fallback"))
      for (const auto& s : spec["fallback"]) tw.fallback.push_back(parse_stream(s.get<std::string>()));
    if (tw.streams.empty() && tw.fallback.empty()) throw UsageError("wiring task '" + key + "' has no streams");
    if (t == Task::Fm)
      for (auto s : tw.streams)
        if (s == Stream::Vhr || s == Stream::Risk)
          throw UsageError("floodwater mapping consumes SAR streams only");
    w.get(t) = std::move(tw);
  }
  return w;
}

bool ModalityBundle::vhr_present() const {
  if (!vhr.defined()) return false;
  for (double v : vhr.values())
    if (v != kNoData) return true;
  return false;
}

const std::optional<Tensor>& TaskOutputs::get(Task t) const {
  switch (t) {
    case Task::Bda: return bda;
    case Task::Fm: return fm;
    case Task::Loc: break;
  }
  return loc;
}

std::optional<Tensor>& TaskOutputs::get(Task t) {
  return const_cast<std::optional<Tensor>&>(std::as_const(*this).get(t));
}

FloodDamageNet::FloodDamageNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
  Rng rng(derive_seed(cfg_.seed, "model-init"));
  const auto& enc = cfg_.encoder;
  sar_embed_ = ModalityEmbedding::create(params_, "embed.sar", Modality::Sar, enc.c0, rng);
  vhr_embed_ = ModalityEmbedding::create(params_, "embed.vhr", Modality::Vhr, enc.c0, rng);
  risk_embed_ = ModalityEmbedding::create(params_, "embed.risk", Modality::Risk, enc.c0, rng);
  image_encoder_ = HierarchicalEncoder::create(params_, kImageEncoder, enc, rng);
  risk_encoder_ = HierarchicalEncoder::create(params_, kRiskEncoder, enc, rng);
  for (auto t : kTasks)
    if (cfg_.wiring.get(t))
      decoders_[static_cast<std::size_t>(t)] =
          TaskDecoder::create(params_, std::string("decoder.") + task_name(t), enc, task_classes(t), rng);
}

TaskOutputs FloodDamageNet::forward(const ModalityBundle& b) const {
  NoGradGuard guard;
  ParamBinding bind(params_, false);
  return forward(bind, b);
}

TaskOutputs FloodDamageNet::forward(const ParamBinding& p, const ModalityBundle& b) const {
  if (!b.pre_sar.defined() || !b.post_sar.defined() || !b.risk.defined())
    throw ShapeError("bundle needs pre_sar, post_sar and risk rasters");
  const auto& ref = b.pre_sar.shape();
  auto same_grid = [&](const Tensor& t, const char* what) {
    if (t.rank() != 4 || t.dim(0) != ref[0] || t.dim(1) != ref[1] || t.dim(2) != ref[2])
      throw ShapeError(std::string("bundle ") + what + " " + shape_string(t.shape()) +
                       " does not match pre_sar " + shape_string(ref));
  };
  same_grid(b.post_sar, "post_sar");
  same_grid(b.risk, "risk");
  const bool vhr_ok = b.vhr_present();
  if (vhr_ok) same_grid(b.vhr, "vhr");

  std::array<std::vector<Stream>, 3> resolved;
  std::array<bool, 4> needed{};
  for (auto t : kTasks) {
    const auto& w = cfg_.wiring.get(t);
    if (!w || !has_decoder(t)) continue;
    resolved[static_cast<std::size_t>(t)] = w->resolve(vhr_ok);
    for (auto s : resolved[static_cast<std::size_t>(t)]) needed[static_cast<std::size_t>(s)] = true;
  }

  // All image-like streams share one encoder pass.
  const std::size_t B = ref[0];
  std::vector<Tensor> image_tokens;
  std::array<std::size_t, 4> offset{};
  auto push = [&](Stream s, Tensor tokens) {
    offset[static_cast<std::size_t>(s)] = image_tokens.size() * B;
    image_tokens.push_back(std::move(tokens));
  };
  if (needed[0]) push(Stream::Pre, sar_embed_(p, b.pre_sar));
  if (needed[1]) push(Stream::Post, sar_embed_(p, b.post_sar));
  if (needed[2]) push(Stream::Vhr, vhr_embed_(p, b.vhr));

  std::array<FeaturePyramid, 4> pyramids;
  if (!image_tokens.empty()) {
    const auto joint = image_encoder_(p, image_tokens.size() == 1 ? image_tokens[0] : concat(image_tokens, 0));
    for (auto s : {Stream::Pre, Stream::Post, Stream::Vhr}) {
      const auto i = static_cast<std::size_t>(s);
      if (needed[i])
        pyramids[i] = image_tokens.size() == 1 ? joint : joint.batch_slice(offset[i], offset[i] + B);
    }
  }
  if (needed[3]) pyramids[3] = risk_encoder_(p, risk_embed_(p, b.risk));

  TaskOutputs out;
  for (auto t : kTasks) {
    const auto ti = static_cast<std::size_t>(t);
    if (!has_decoder(t)) continue;
    std::vector<FeaturePyramid> streams;
    for (auto s : resolved[ti]) streams.push_back(pyramids[static_cast<std::size_t>(s)]);
    out.get(t) = (*decoders_[ti])(p, streams);
  }
  return out;
}

}  // namespace fds::model
