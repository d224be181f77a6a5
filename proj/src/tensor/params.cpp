#include "tensor/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "common/errors.hpp"

namespace fds {

ParamId ParameterSet::add(std::string name, Shape shape, std::vector<Real> values) {
  if (find(name)) throw std::logic_error("parameter '" + name + "' registered twice");
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(Tensor::from(std::move(shape), std::move(values), false));
  return ParamId{tensors_.size() - 1};
}

ParamId ParameterSet::add_uniform(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
  const Real bound = 1.0 / std::sqrt(static_cast<Real>(std::max<std::size_t>(fan_in, 1)));
  std::vector<Real> v(numel(shape));
  for (auto& x : v) x = uniform(rng, -bound, bound);
  return add(std::move(name), std::move(shape), std::move(v));
}

ParamId ParameterSet::add_constant(std::string name, Shape shape, Real value) {
  auto n = numel(shape);
  return add(std::move(name), std::move(shape), std::vector<Real>(n, value));
}

std::size_t ParameterSet::total_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

std::optional<ParamId> ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return ParamId{it->second};
}

std::vector<ParamId> ParameterSet::ids() const {
  std::vector<ParamId> out;
  for (std::size_t i = 0; i < names_.size(); ++i) out.push_back(ParamId{i});
  return out;
}

std::vector<ParamId> ParameterSet::with_prefix(const std::string& prefix) const {
  std::vector<ParamId> out;
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i].rfind(prefix, 0) == 0) out.push_back(ParamId{i});
  return out;
}

void ParameterSet::round_to_float() {
  for (auto& t : tensors_)
    for (auto& v : t.mutable_values()) v = static_cast<Real>(static_cast<float>(v));
}

ParamBinding::ParamBinding(const ParameterSet& params, bool requires_grad) {
  leaves_.reserve(params.size());
  for (auto id : params.ids()) leaves_.push_back(params.tensor(id).alias_leaf(requires_grad));
}

std::vector<Real> ParamBinding::grad(ParamId id) const {
  const Tensor& t = leaves_.at(id.index);
  if (!t.has_grad()) return std::vector<Real>(t.numel(), 0.0);
  auto g = t.grad();
  return {g.begin(), g.end()};
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw DataError("checkpoint " + path.string() + ": truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint " + path.string() + ": cannot open for writing");
  os.write("FDSW", 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (auto id : params.ids()) {
    const auto& name = params.name(id);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = params.shape(id);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::uint64_t>(os, d);
    for (Real v : params.values(id)) put<float>(os, static_cast<float>(v));
  }
  if (!os) throw DataError("checkpoint " + path.string() + ": write failed");
}

void load_checkpoint(ParameterSet& params, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint " + path.string() + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FDSW", 4) != 0)
    throw DataError("checkpoint " + path.string() + ": bad magic bytes");
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint " + path.string() + ": unsupported version " +
                    std::to_string(version));
  const auto count = get<std::uint32_t>(is, path);
  std::map<std::string, bool> seen;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = get<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("checkpoint " + path.string() + ": truncated name");
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
    auto id = params.find(name);
    if (!id) throw DataError("checkpoint " + path.string() + ": unknown parameter '" + name + "'");
    if (params.shape(*id) != shape)
      throw DataError("checkpoint " + path.string() + ": parameter '" + name + "' has shape " +
                      shape_string(shape) + ", model expects " + shape_string(params.shape(*id)));
    auto dst = params.mutable_values(*id);
    for (auto& v : dst) v = static_cast<Real>(get<float>(is, path));
    seen[name] = true;
  }
  for (auto id : params.ids())
    if (!seen.count(params.name(id)))
      throw DataError("checkpoint " + path.string() + ": missing parameter '" + params.name(id) + "'");
}

}  // namespace fds
