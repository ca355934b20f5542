#include "reshape/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "reshape/error.hpp"

namespace reshape {

namespace {

constexpr char kMagic[4] = {'R', 'S', 'G', 'N'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  nlohmann::json j;
  j["kind"] = header.kind;
  j["spec"] = header.spec_json.empty() ? nlohmann::json::object()
                                       : nlohmann::json::parse(header.spec_json);
  j["step"] = header.step;
  j["seed"] = header.seed;
  j["extra"] = header.extra_json.empty() ? nlohmann::json::object()
                                         : nlohmann::json::parse(header.extra_json);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    nlohmann::json m;
    m["name"] = name;
    m["shape"] = t->shape();
    manifest.push_back(std::move(m));
  }
  j["params"] = std::move(manifest);
  const std::string hdr = j.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u64(out, hdr.size());
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  // Host is little-endian; payload is raw float32 in manifest order.
  for (const auto& [name, t] : tensors)
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(float)));
  if (!out) throw IoError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a checkpoint file: " + path);
  const uint32_t version = read_u32(in);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const uint64_t hdr_len = read_u64(in);
  std::string hdr(hdr_len, '\0');
  in.read(hdr.data(), static_cast<std::streamsize>(hdr_len));
  if (!in) throw IoError("truncated checkpoint header: " + path);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(hdr);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid checkpoint header: " + std::string(e.what()));
  }

  LoadedCheckpoint ckpt;
  ckpt.header.kind = j.at("kind").get<std::string>();
  ckpt.header.spec_json = j.at("spec").dump();
  ckpt.header.step = j.at("step").get<int64_t>();
  ckpt.header.seed = j.at("seed").get<uint64_t>();
  ckpt.header.extra_json = j.at("extra").dump();

  for (const auto& m : j.at("params")) {
    const std::string name = m.at("name").get<std::string>();
    std::vector<int> shape = m.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint payload: " + path);
    ckpt.tensors.emplace_back(name, std::move(t));
  }
  return ckpt;
}

const Tensor* LoadedCheckpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::vector<std::pair<std::string, const Tensor*>> store_tensors(const ParamStore& store) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(static_cast<size_t>(store.count()));
  for (int i = 0; i < store.count(); ++i) out.emplace_back(store.name(i), &store.value(i));
  return out;
}

void restore_store(ParamStore& store, const LoadedCheckpoint& ckpt, const std::string& prefix) {
  for (int i = 0; i < store.count(); ++i) {
    const Tensor* src = ckpt.find(prefix + store.name(i));
    if (!src) throw IoError("checkpoint is missing parameter " + prefix + store.name(i));
    if (!src->same_shape(store.value(i)))
      throw IoError("checkpoint parameter shape mismatch for " + store.name(i));
    store.value(i) = *src;
  }
}

void save_generator(const std::string& path, const Generator& g, int64_t step) {
  CheckpointHeader h;
  h.kind = "generator";
  h.spec_json = g.spec().to_json();
  h.step = step;
  h.seed = g.params().seed;
  save_checkpoint(path, h, store_tensors(g.params()));
}

Generator load_generator(const std::string& path) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.header.kind != "generator")
    throw IoError("expected a generator checkpoint, got kind '" + ckpt.header.kind + "'");
  Generator g(GeneratorSpec::from_json(ckpt.header.spec_json), ckpt.header.seed);
  restore_store(g.params(), ckpt);
  g.params().step = ckpt.header.step;
  return g;
}

void save_discriminator(const std::string& path, const Discriminator& d, int64_t step) {
  CheckpointHeader h;
  h.kind = "discriminator";
  h.spec_json = d.spec().to_json();
  h.step = step;
  h.seed = d.params().seed;
  save_checkpoint(path, h, store_tensors(d.params()));
}

Discriminator load_discriminator(const std::string& path) {
  LoadedCheckpoint ckpt = load_checkpoint(path);
  if (ckpt.header.kind != "discriminator")
    throw IoError("expected a discriminator checkpoint, got kind '" + ckpt.header.kind + "'");
  Discriminator d(DiscriminatorSpec::from_json(ckpt.header.spec_json), ckpt.header.seed);
  restore_store(d.params(), ckpt);
  d.params().step = ckpt.header.step;
  return d;
}

}  // namespace reshape
