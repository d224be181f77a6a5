#include "data/chip.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "common/errors.hpp"

namespace fds::data {

bool ChipSample::vhr_present() const {
  for (double v : vhr.data)
    if (v != kNoDataValue) return true;
  return false;
}

namespace {

template <typename T>
void check_shape(const Planar<T>& r, std::size_t channels, const geo::GridSpec& g, const char* name) {
  if (r.channels != channels || r.height != g.height || r.width != g.width || r.data.size() != channels * g.height * g.width)
    throw ShapeError(std::string("chip raster '") + name + "' does not match the chip grid");
}

void check_classes(const ByteRaster& r, std::uint8_t limit, const char* name) {
  for (auto v : r.data)
    if (v >= limit && v != geo::kNoData)
      throw DataError(std::string("chip raster '") + name + "' holds value " + std::to_string(v));
}

}  // namespace

void ChipSample::validate() const {
  grid.validate();
  check_shape(pre_sar, kSarChannels, grid, "pre_sar");
  check_shape(post_sar, kSarChannels, grid, "post_sar");
  check_shape(vhr, kVhrChannels, grid, "vhr");
  check_shape(risk, 1, grid, "risk");
  check_shape(bda, 1, grid, "bda");
  check_shape(fm, 1, grid, "fm");
  check_shape(loc, 1, grid, "loc");
  check_classes(risk, 5, "risk");
  check_classes(bda, 4, "bda");
  check_classes(fm, 3, "fm");
  check_classes(loc, 2, "loc");
}

geo::LabelRaster label_raster(const ChipSample& s, const ByteRaster& layer) {
  if (layer.channels != 1) throw ShapeError("label raster must have one channel");
  return {s.grid, layer.data};
}

namespace {

void write_bytes(const std::filesystem::path& p, const char* bytes, std::size_t n) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes, static_cast<std::streamsize>(n));
  if (!out) throw DataError("write failed: " + p.string());
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_floats(const std::filesystem::path& p, const FloatRaster& r) {
  std::vector<char> bytes(r.data.size() * 4);
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    auto u = std::bit_cast<std::uint32_t>(static_cast<float>(r.data[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xff);
  }
  write_bytes(p, bytes.data(), bytes.size());
}

FloatRaster read_floats(const std::filesystem::path& p, std::size_t c, std::size_t h, std::size_t w) {
  const auto bytes = read_bytes(p);
  FloatRaster r(c, h, w);
  if (bytes.size() != r.data.size() * 4)
    throw DataError(p.string() + ": expected " + std::to_string(r.data.size() * 4) + " bytes, found " +
                    std::to_string(bytes.size()));
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    r.data[i] = std::bit_cast<float>(u);
  }
  return r;
}

ByteRaster read_u8(const std::filesystem::path& p, std::size_t h, std::size_t w) {
  const auto bytes = read_bytes(p);
  ByteRaster r(1, h, w);
  if (bytes.size() != r.data.size())
    throw DataError(p.string() + ": expected " + std::to_string(r.data.size()) + " bytes, found " + std::to_string(bytes.size()));
  std::memcpy(r.data.data(), bytes.data(), bytes.size());
  return r;
}

struct Layer {
  const char* name;
  bool is_float;
  std::size_t channels;
};

constexpr Layer kLayers[] = {{"pre_sar", true, kSarChannels}, {"post_sar", true, kSarChannels},
                             {"vhr", true, kVhrChannels},     {"risk", false, 1},
                             {"bda", false, 1},               {"fm", false, 1},
                             {"loc", false, 1}};

nlohmann::json class_sets() {
  return {{"risk", {0, 1, 2, 3, 4}}, {"bda", {0, 1, 2, 3}}, {"fm", {0, 1, 2}}, {"loc", {0, 1}}};
}

}  // namespace

void write_chip(const std::filesystem::path& dir, const ChipSample& s) {
  s.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json rasters;
  for (const auto& l : kLayers) {
    const std::string file = std::string(l.name) + (l.is_float ? ".f32" : ".u8");
    nlohmann::json names = l.channels == kSarChannels ? nlohmann::json(kSarChannelNames)
                           : l.channels == kVhrChannels ? nlohmann::json(kVhrChannelNames)
                                                         : nlohmann::json::array({l.name});
    rasters[l.name] = {{"file", file},
                       {"dtype", l.is_float ? "float32" : "uint8"},
                       {"shape", {l.channels, s.grid.height, s.grid.width}},
                       {"channels", names}};
  }
  const nlohmann::json manifest = {{"id", s.id},
                                   {"grid", geo::grid_to_json(s.grid)},
                                   {"resolution_m", s.grid.pixel},
                                   {"crs", "local planar meters"},
                                   {"nodata", 255},
                                   {"layout", "channel-planar, row-major, little-endian"},
                                   {"vhr_present", s.vhr_present()},
                                   {"class_sets", class_sets()},
                                   {"rasters", rasters}};
  geo::write_json(dir / "manifest.json", manifest);
  write_floats(dir / "pre_sar.f32", s.pre_sar);
  write_floats(dir / "post_sar.f32", s.post_sar);
  write_floats(dir / "vhr.f32", s.vhr);
  for (const auto* l : {&s.risk, &s.bda, &s.fm, &s.loc}) {
    const char* name = l == &s.risk ? "risk" : l == &s.bda ? "bda" : l == &s.fm ? "fm" : "loc";
    write_bytes(dir / (std::string(name) + ".u8"), reinterpret_cast<const char*>(l->data.data()), l->data.size());
  }
}

ChipSample read_chip(const std::filesystem::path& dir) {
  const auto m = geo::read_json(dir / "manifest.json");
  ChipSample s;
  try {
    s.id = m.at("id").get<std::string>();
    s.grid = geo::grid_from_json(m.at("grid"));
    if (m.value("nodata", 255) != 255) throw DataError(dir.string() + ": nodata must be 255");
    const auto& r = m.at("rasters");
    auto file = [&](const char* name) { return dir / r.at(name).at("file").get<std::string>(); };
    const auto h = s.grid.height, w = s.grid.width;
    s.pre_sar = read_floats(file("pre_sar"), kSarChannels, h, w);
    s.post_sar = read_floats(file("post_sar"), kSarChannels, h, w);
    s.vhr = read_floats(file("vhr"), kVhrChannels, h, w);
    s.risk = read_u8(file("risk"), h, w);
    s.bda = read_u8(file("bda"), h, w);
    s.fm = read_u8(file("fm"), h, w);
    s.loc = read_u8(file("loc"), h, w);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir.string() + "/manifest.json: " + e.what());
  }
  s.validate();
  return s;
}

}  // namespace fds::data
