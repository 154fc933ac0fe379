#include "sparsefocus/sample.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "sparsefocus/errors.hpp"

namespace sparsefocus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_bytes(const fs::path& file, const void* data, std::size_t n) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + file.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw io_error("write failed: " + file.string());
}

void read_bytes(const fs::path& file, void* data, std::size_t n) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw io_error("missing file: " + file.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size != n)
    throw io_error("size mismatch: " + file.string() + " has " + std::to_string(size) +
                   " bytes, expected " + std::to_string(n));
  in.seekg(0);
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in) throw io_error("read failed: " + file.string());
}

}  // namespace

void write_plane_f32(const PlaneF& plane, const fs::path& file) {
  write_bytes(file, plane.data(), sizeof(float) * static_cast<std::size_t>(plane.size()));
}

PlaneF read_plane_f32(const fs::path& file, Eigen::Index h, Eigen::Index w) {
  PlaneF plane(h, w);
  read_bytes(file, plane.data(), sizeof(float) * static_cast<std::size_t>(plane.size()));
  return plane;
}

void write_plane_u8(const MaskPlane& plane, const fs::path& file) {
  write_bytes(file, plane.data(), static_cast<std::size_t>(plane.size()));
}

MaskPlane read_plane_u8(const fs::path& file, Eigen::Index h, Eigen::Index w) {
  MaskPlane plane(h, w);
  read_bytes(file, plane.data(), static_cast<std::size_t>(plane.size()));
  return plane;
}

void write_sample(const PhantomSample& sample, const fs::path& dir) {
  if (sample.mr.size() == 0) throw contract_error("write_sample: empty sample");
  require_same_dims(sample.mr, sample.ct, "write_sample");
  require_same_dims(sample.mr, sample.body, "write_sample");
  fs::create_directories(dir);
  json meta = {{"version", 1},
               {"height", sample.mr.rows()},
               {"width", sample.mr.cols()},
               {"seed", sample.seed},
               {"hu_range", {-1000, 3000}}};
  std::ofstream out(dir / "meta.json");
  if (!out) throw io_error("cannot open for writing: " + (dir / "meta.json").string());
  out << meta.dump(2) << "\n";
  write_plane_f32(sample.mr, dir / "mr.f32");
  write_plane_f32(sample.ct, dir / "ct.f32");
  write_plane_u8(sample.body, dir / "body.u8");
  if (sample.sct) write_plane_f32(*sample.sct, dir / "sct.f32");
  if (sample.bone) write_plane_f32(*sample.bone, dir / "bone.f32");
  if (sample.mask) write_plane_f32(*sample.mask, dir / "mask.f32");
}

PhantomSample read_sample(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw io_error("missing file: " + (dir / "meta.json").string());
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw io_error("bad meta.json in " + dir.string() + ": " + e.what());
  }
  if (!meta.contains("version") || meta["version"] != 1)
    throw io_error("unsupported sample version in " + dir.string());
  const auto h = meta.at("height").get<Eigen::Index>();
  const auto w = meta.at("width").get<Eigen::Index>();
  if (h < 1 || w < 1) throw io_error("bad dims in " + dir.string());

  PhantomSample s;
  s.seed = meta.value("seed", std::int64_t(0));
  s.mr = read_plane_f32(dir / "mr.f32", h, w);
  s.ct = read_plane_f32(dir / "ct.f32", h, w);
  s.body = read_plane_u8(dir / "body.u8", h, w);
  if (fs::exists(dir / "sct.f32")) s.sct = read_plane_f32(dir / "sct.f32", h, w);
  if (fs::exists(dir / "bone.f32")) s.bone = read_plane_f32(dir / "bone.f32", h, w);
  if (fs::exists(dir / "mask.f32")) s.mask = read_plane_f32(dir / "mask.f32", h, w);
  return s;
}

}  // namespace sparsefocus
