#include "geo/raster.hpp"

#include <fstream>
#include <iterator>

#include "common/errors.hpp"

namespace fds::geo {

void write_raster(const std::filesystem::path& path, const LabelRaster& r) {
  r.grid.validate();
  if (r.values.size() != r.grid.width * r.grid.height)
    throw ShapeError("raster payload does not match its grid");
  auto payload = path;
  payload.replace_extension(".u8");
  auto header = grid_to_json(r.grid);
  header["payload"] = payload.filename().string();
  write_json(path, header);
  std::ofstream out(payload, std::ios::binary);
  out.write(reinterpret_cast<const char*>(r.values.data()), static_cast<std::streamsize>(r.values.size()));
  if (!out) throw DataError("write failed: " + payload.string());
}

LabelRaster read_raster(const std::filesystem::path& path) {
  const auto header = read_json(path);
  LabelRaster r;
  r.grid = grid_from_json(header);
  if (header.value("nodata", 255) != 255) throw DataError(path.string() + ": nodata must be 255");
  const auto payload = path.parent_path() / header.value("payload", path.stem().string() + ".u8");
  std::ifstream in(payload, std::ios::binary);
  if (!in) throw DataError("cannot open " + payload.string());
  r.values.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (r.values.size() != r.grid.width * r.grid.height)
    throw DataError(payload.string() + ": expected " + std::to_string(r.grid.width * r.grid.height) + " bytes, found " +
                    std::to_string(r.values.size()));
  return r;
}

}  // namespace fds::geo
