#include "mlp3d/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <algorithm>

#include "mlp3d/config_io.hpp"
#include "mlp3d/errors.hpp"

namespace mlp3d {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'L', 'P', '3', 'D', 'C', 'K', '1'};

struct Opened {
  Json manifest;
  std::streamoff payload = 0;
  std::uintmax_t file_size = 0;
};

Opened open_manifest(std::ifstream& in, const std::filesystem::path& path) {
  Opened o;
  o.file_size = std::filesystem::file_size(path);
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError(path.string() + ": not a checkpoint");
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > o.file_size)
    throw FormatError(path.string() + ": truncated header");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError(path.string() + ": truncated manifest");
  try {
    o.manifest = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": bad manifest: " + e.what());
  }
  if (!o.manifest.is_object() || !o.manifest.contains("format_version") ||
      o.manifest["format_version"] != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint format_version");
  o.payload = static_cast<std::streamoff>(16 + len);
  return o;
}

}  // namespace

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec,
                     const ModelParams<Real>& params) {
  const auto named = params.named_parameters();
  const std::string dtype = precision_name(PrecisionOf<Real>::value);
  Json tensors = Json::object();
  std::uint64_t offset = 0;
  for (const auto& p : named) {
    if (tensors.contains(p.name)) throw FormatError("duplicate parameter name " + p.name);
    const std::uint64_t bytes = p.tensor.numel() * sizeof(Real);
    tensors[p.name] = {{"shape", p.tensor.shape()}, {"dtype", dtype}, {"offset", offset}, {"length", bytes}};
    offset += bytes;
  }
  const Json manifest = {{"format_version", kCheckpointVersion},
                         {"spec", spec_to_json(spec)},
                         {"pool_group", params.pool_group},
                         {"dtype", dtype},
                         {"tensors", tensors}};
  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::uint64_t len = text.size();
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(len));
  for (const auto& p : named) {
    const auto d = p.tensor.data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
  }
  if (!out) throw FormatError("failed writing " + path.string());
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const Opened o = open_manifest(in, path);
  const Json& m = o.manifest;
  const std::string dtype = precision_name(PrecisionOf<Real>::value);
  if (m.value("dtype", "") != dtype)
    throw FormatError(path.string() + ": checkpoint dtype is " + m.value("dtype", "?") + ", expected " + dtype);

  Checkpoint<Real> ck;
  ck.spec = spec_from_json(m.at("spec"));
  std::mt19937_64 rng(0);
  ck.params = init_params<Real>(ck.spec, rng, {.stddev = 0.02, .pool_group = m.at("pool_group").get<std::size_t>()});
  auto named = ck.params.named_parameters();
  const Json& tensors = m.at("tensors");
  if (tensors.size() != named.size())
    throw FormatError(path.string() + ": checkpoint holds " + std::to_string(tensors.size()) +
                      " tensors, the spec needs " + std::to_string(named.size()));
  const std::uint64_t payload_bytes = o.file_size - static_cast<std::uint64_t>(o.payload);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (auto& p : named) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw FormatError(path.string() + ": missing tensor " + p.name);
    if (it->at("shape").template get<std::vector<std::size_t>>() != p.tensor.shape())
      throw FormatError(path.string() + ": shape mismatch for " + p.name);
    const auto offset = it->at("offset").template get<std::uint64_t>();
    const auto length = it->at("length").template get<std::uint64_t>();
    if (length != p.tensor.numel() * sizeof(Real) || offset > payload_bytes || length > payload_bytes - offset)
      throw FormatError(path.string() + ": bad extent for " + p.name);
    ranges.emplace_back(offset, length);
    auto dst = p.tensor.mutable_data();
    in.seekg(o.payload + static_cast<std::streamoff>(offset));
    if (!in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(length)))
      throw FormatError(path.string() + ": truncated blob for " + p.name);
  }
  std::sort(ranges.begin(), ranges.end());
  std::uint64_t end = 0;
  for (auto [off, len] : ranges) {
    if (off < end) throw FormatError(path.string() + ": overlapping tensor blobs");
    end = off + len;
  }
  return ck;
}

Json read_checkpoint_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return open_manifest(in, path).manifest;
}

template void save_checkpoint(const std::filesystem::path&, const NetworkSpec&, const ModelParams<float>&);
template void save_checkpoint(const std::filesystem::path&, const NetworkSpec&, const ModelParams<double>&);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace mlp3d
