#include "ctxattn/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace ctxattn {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'C', 'T', 'X', 'A', 'T', 'T', 'N', '\0'};

template <class T>
void put_le(std::string& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("corrupt checkpoint: truncated");
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

void round_to_float(Parameters& p) {
  for (auto& t : p.tensors)
    for (ad::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<double>(static_cast<float>(t.data()[i]));
}

json hyper_json(const Hyperparams& hp) {
  return {{"n_enc", hp.n_enc},     {"n_dec", hp.n_dec},
          {"heads", hp.heads},     {"d_model", hp.d_model},
          {"d_ff", hp.d_ff},       {"dropout", hp.dropout},
          {"label_smoothing", hp.label_smoothing},
          {"max_len", hp.max_len}, {"src_vocab", hp.src_vocab},
          {"tgt_vocab", hp.tgt_vocab}};
}

Hyperparams hyper_from(const json& j) {
  Hyperparams hp;
  hp.n_enc = j.at("n_enc");
  hp.n_dec = j.at("n_dec");
  hp.heads = j.at("heads");
  hp.d_model = j.at("d_model");
  hp.d_ff = j.at("d_ff");
  hp.dropout = j.at("dropout");
  hp.label_smoothing = j.at("label_smoothing");
  hp.max_len = j.at("max_len");
  hp.src_vocab = j.at("src_vocab");
  hp.tgt_vocab = j.at("tgt_vocab");
  return hp;
}

json shapes(const Parameters& p) {
  json arr = json::array();
  for (std::size_t i = 0; i < p.size(); ++i)
    arr.push_back({{"name", p.names[i]}, {"rows", p.tensors[i].rows()}, {"cols", p.tensors[i].cols()}});
  return arr;
}

void put_tensors(std::string& out, const Parameters& p) {
  for (const auto& t : p.tensors)
    for (ad::Index i = 0; i < t.size(); ++i) put_le<float>(out, static_cast<float>(t.data()[i]));
}

Parameters get_tensors(const std::string& in, std::size_t& pos, const json& shape_list) {
  Parameters p;
  for (const auto& s : shape_list) {
    const auto rows = s.at("rows").get<ad::Index>();
    const auto cols = s.at("cols").get<ad::Index>();
    if (rows < 0 || cols < 0) throw CheckpointError("corrupt checkpoint: negative shape");
    ad::Matrix m(rows, cols);
    for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(get_le<float>(in, pos));
    p.names.push_back(s.at("name").get<std::string>());
    p.tensors.push_back(std::move(m));
  }
  return p;
}

}  // namespace

Checkpoint Checkpoint::capture(const Transformer& model, std::uint64_t seed) {
  Checkpoint c;
  c.hyperparams = model.hyperparams();
  c.params = model.parameters();
  round_to_float(c.params);
  c.seed = seed;
  return c;
}

Transformer Checkpoint::model() const { return Transformer(hyperparams, params); }

std::string serialize_checkpoint(const Checkpoint& c) {
  json header = {{"hyperparams", hyper_json(c.hyperparams)},
                 {"tensors", shapes(c.params)},
                 {"seed", c.seed},
                 {"rng_state", c.rng_state},
                 {"vocab", c.vocab}};
  if (c.context) header["context"] = {{"n", c.context->n}, {"m", c.context->m}};
  if (c.optimizer) header["optimizer"] = {{"step", c.optimizer->step}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, c.version);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  put_tensors(out, c.params);
  if (c.optimizer) {
    put_tensors(out, c.optimizer->m);
    put_tensors(out, c.optimizer->v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("corrupt checkpoint: bad magic");
  std::size_t pos = sizeof(kMagic);
  Checkpoint c;
  c.version = get_le<std::uint32_t>(bytes, pos);
  if (c.version != Checkpoint::kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version) + " (reader expects " +
                          std::to_string(Checkpoint::kVersion) + ")");
  const auto len = get_le<std::uint64_t>(bytes, pos);
  if (len > bytes.size() - pos) throw CheckpointError("corrupt checkpoint: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(pos, len));
    pos += len;
    c.hyperparams = hyper_from(header.at("hyperparams"));
    c.seed = header.at("seed").get<std::uint64_t>();
    c.rng_state = header.value("rng_state", std::string());
    c.vocab = header.value("vocab", std::vector<std::string>());
    if (header.contains("context"))
      c.context = ContextConfig{header["context"].at("n").get<std::size_t>(), header["context"].at("m").get<std::size_t>()};
    const auto& tensors = header.at("tensors");
    c.params = get_tensors(bytes, pos, tensors);
    if (header.contains("optimizer")) {
      AdamState st;
      st.step = header["optimizer"].at("step").get<std::uint64_t>();
      st.m = get_tensors(bytes, pos, tensors);
      st.v = get_tensors(bytes, pos, tensors);
      c.optimizer = std::move(st);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
  if (pos != bytes.size()) throw CheckpointError("corrupt checkpoint: trailing bytes");
  try {
    Transformer probe(c.hyperparams, c.params);
  } catch (const ModelError& e) {
    throw CheckpointError(std::string("checkpoint shape mismatch: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  atomic_write(path, serialize_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

}  // namespace ctxattn
