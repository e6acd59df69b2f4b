#include "cle/checkpoint.hpp"

namespace cle {

namespace {
constexpr char kMagic[4] = {'C', 'L', 'C', 'K'};
}

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void Checkpoint::put(std::string name, Shape shape, std::vector<float> values) {
  for (auto& t : tensors) {
    if (t.name == name) {
      t.shape = std::move(shape);
      t.values = std::move(values);
      return;
    }
  }
  tensors.push_back({std::move(name), std::move(shape), std::move(values)});
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string meta;
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos ||
        v.find('\n') != std::string::npos) {
      throw std::invalid_argument("metadata entry cannot be encoded: " + k);
    }
    meta += k + "=" + v + "\n";
  }
  std::string out(kMagic, 4);
  put_u16(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xffff) throw std::invalid_argument("tensor name too long");
    if (shape_numel(t.shape) != t.values.size()) {
      throw std::invalid_argument("tensor " + t.name + " has inconsistent extents");
    }
    put_u16(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(t.shape.size()));
    for (auto e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : t.values) put_f32(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.bytes(4) != std::string(kMagic, 4)) throw FormatError("checkpoint: bad magic at offset 0");
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const std::string meta = r.bytes(r.u32());
  for (const auto& line : split(meta, '\n')) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: bad metadata line '" + line + "'");
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  while (r.remaining() > 0) {
    NamedTensor t;
    t.name = r.bytes(r.u16());
    const std::size_t rank = r.u8();
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank; ++i) {
      t.shape.push_back(r.u32());
      n *= t.shape.back();
    }
    if (n > r.remaining() / 4) throw FormatError("checkpoint: tensor " + t.name + " is truncated");
    t.values.resize(n);
    for (auto& v : t.values) v = r.f32();
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

template <typename T>
Checkpoint snapshot(Network<T>& net, const Metadata& extra) {
  Checkpoint ckpt;
  ckpt.metadata = extra;
  for (const auto& [k, v] : net.config().to_metadata()) ckpt.metadata[k] = v;
  auto add = [&](const std::vector<ParamRef<T>>& refs) {
    for (const auto& p : refs) {
      std::vector<float> v(p.tensor->numel());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>((*p.tensor)[i]);
      ckpt.put(p.name, p.tensor->shape(), std::move(v));
    }
  };
  add(net.parameters());
  add(net.buffers());
  return ckpt;
}

template <typename T>
void restore(Network<T>& net, const Checkpoint& ckpt) {
  ModelConfig stored;
  try {
    stored = ModelConfig::from_metadata(ckpt.metadata);
  } catch (const std::exception& e) {
    throw ArchitectureMismatch(std::string("checkpoint does not describe a model: ") + e.what());
  }
  if (!(stored == net.config())) {
    throw ArchitectureMismatch(std::string("checkpoint holds a ") + to_string(stored.arch) +
                               " model (" + std::to_string(stored.num_classes) +
                               " classes) that does not match the requested " +
                               to_string(net.config().arch) + " model (" +
                               std::to_string(net.config().num_classes) + " classes)");
  }
  auto load = [&](const std::vector<ParamRef<T>>& refs) {
    for (const auto& p : refs) {
      const NamedTensor* t = ckpt.find(p.name);
      if (!t) throw ArchitectureMismatch("checkpoint lacks tensor " + p.name);
      if (t->shape != p.tensor->shape()) {
        throw ArchitectureMismatch("tensor " + p.name + " is " + shape_to_string(t->shape) +
                                   ", expected " + shape_to_string(p.tensor->shape()));
      }
      for (std::size_t i = 0; i < t->values.size(); ++i) (*p.tensor)[i] = static_cast<T>(t->values[i]);
    }
  };
  load(net.parameters());
  load(net.buffers());
}

std::unique_ptr<Model> load_model(const std::filesystem::path& path, Checkpoint* out) {
  Checkpoint ckpt = load_checkpoint(path);
  auto net = std::make_unique<Model>(ModelConfig::from_metadata(ckpt.metadata), 0);
  restore(*net, ckpt);
  if (out) *out = std::move(ckpt);
  return net;
}

template Checkpoint snapshot(Network<float>&, const Metadata&);
template Checkpoint snapshot(Network<double>&, const Metadata&);
template void restore(Network<float>&, const Checkpoint&);
template void restore(Network<double>&, const Checkpoint&);

}  // namespace cle
