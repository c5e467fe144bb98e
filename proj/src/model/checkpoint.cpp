#include "pali/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace pali {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'A', 'L', 'I', 'C', 'K', 'P', 'T'};

template <typename Scalar>
constexpr const char* dtype_name() {
  return sizeof(Scalar) == 8 ? "float64" : "float32";
}

std::ifstream open_for_read(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw ArtifactError("checkpoint not found: " + path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open checkpoint: " + path);
  return in;
}

template <typename T>
T read_le(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  return v;
}

nlohmann::json read_manifest(std::istream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("not a checkpoint file: " + path);
  const auto version = read_le<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  const auto length = read_le<std::uint64_t>(in, path);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw std::runtime_error("truncated checkpoint manifest: " + path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint manifest in " + path + ": " + e.what());
  }
}

template <typename Stored, typename Scalar>
Tensor<Scalar> read_array(std::istream& in, Shape shape, std::uint64_t count, const std::string& path) {
  if (static_cast<std::uint64_t>(shape_size(shape)) != count) {
    throw std::runtime_error("checkpoint array count does not match its shape: " + path);
  }
  Tensor<Stored> t(std::move(shape));
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(count * sizeof(Stored)));
  if (!in) throw std::runtime_error("truncated checkpoint data: " + path);
  if constexpr (std::is_same_v<Stored, Scalar>) {
    return t;
  } else {
    return t.template cast<Scalar>();
  }
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& checkpoint) {
  nlohmann::json arrays = nlohmann::json::array();
  std::vector<const Tensor<Scalar>*> order;
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, const char* kind, const Tensor<Scalar>& t, bool trainable) {
    arrays.push_back({{"name", name},
                      {"kind", kind},
                      {"shape", t.shape()},
                      {"trainable", trainable},
                      {"offset", offset},
                      {"count", t.size()}});
    offset += static_cast<std::uint64_t>(t.size());
    order.push_back(&t);
  };
  for (const auto& [name, p] : checkpoint.params) add(name, "param", p.value, p.trainable);
  for (const auto& [name, t] : checkpoint.optimizer) add(name, "optimizer", t, false);

  const nlohmann::json manifest = {{"format_version", kCheckpointVersion},
                                   {"dtype", dtype_name<Scalar>()},
                                   {"step", checkpoint.step},
                                   {"config", checkpoint.config},
                                   {"meta", checkpoint.meta},
                                   {"arrays", arrays}};
  const std::string text = manifest.dump();

  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t length = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* t : order) {
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(Scalar)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_checkpoint_manifest(const std::string& path) {
  auto in = open_for_read(path);
  return read_manifest(in, path);
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  auto in = open_for_read(path);
  const auto manifest = read_manifest(in, path);
  Checkpoint<Scalar> ckpt;
  try {
    ckpt.config = manifest.at("config").get<ModelConfig>();
    ckpt.step = manifest.at("step").get<std::int64_t>();
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    const auto dtype = manifest.at("dtype").get<std::string>();
    if (dtype != "float64" && dtype != "float32") throw std::runtime_error("unknown checkpoint dtype " + dtype);
    for (const auto& a : manifest.at("arrays")) {
      auto shape = a.at("shape").get<Shape>();
      const auto count = a.at("count").get<std::uint64_t>();
      auto t = dtype == "float64" ? read_array<double, Scalar>(in, std::move(shape), count, path)
                                  : read_array<float, Scalar>(in, std::move(shape), count, path);
      const auto name = a.at("name").get<std::string>();
      if (a.at("kind") == "param") {
        ckpt.params.add(name, std::move(t), a.at("trainable").get<bool>());
      } else {
        ckpt.optimizer.emplace(name, std::move(t));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint manifest in " + path + ": " + e.what());
  }
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw std::runtime_error("trailing bytes after checkpoint data: " + path);
  }
  return ckpt;
}

template void save_checkpoint(const std::string&, const Checkpoint<double>&);
template void save_checkpoint(const std::string&, const Checkpoint<float>&);
template Checkpoint<double> load_checkpoint(const std::string&);
template Checkpoint<float> load_checkpoint(const std::string&);

}  // namespace pali
