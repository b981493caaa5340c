#include "attnscope/model_io.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <string_view>

#include "attnscope/error.hpp"

namespace attnscope {

static_assert(std::endian::native == std::endian::little, "ABLK1 I/O assumes a little-endian host");

namespace {

constexpr std::string_view kMagic = "ABLK1";
constexpr std::string_view kArchitecturePostLn = "post_ln";

std::size_t dtype_size(DType t) { return t == DType::F32 ? 4 : 8; }

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view get_bytes(std::size_t n) {
    need(n);
    std::string_view s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw Error(ErrorCode::MalformedFile, "truncated header or directory");
  }

  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string layer_prefix(int k) { return fmt::format("layers.{}.", k); }

class TensorSource {
 public:
  explicit TensorSource(const TensorContainer& c) : c_(c) {}

  const Tensor& find(const std::string& name) const {
    auto it = c_.tensors.find(name);
    if (it == c_.tensors.end()) throw Error(ErrorCode::MalformedFile, fmt::format("missing tensor {}", name));
    return it->second;
  }

  bool has(const std::string& name) const { return c_.tensors.contains(name); }

  Matrix matrix(const std::string& name, std::uint64_t rows, std::uint64_t cols) const {
    const Tensor& t = find(name);
    if (t.dims.size() != 2 || t.dims[0] != rows || t.dims[1] != cols)
      throw Error(ErrorCode::ShapeMismatch, fmt::format("{} has shape {}, expected [{}, {}]", name,
                                                        fmt::join(t.dims, "x"), rows, cols));
    Matrix m(rows, cols);
    for (std::uint64_t r = 0; r < rows; ++r)
      for (std::uint64_t col = 0; col < cols; ++col) m(r, col) = t.data[r * cols + col];
    check_finite(name, t);
    return m;
  }

  RowVector vector(const std::string& name, std::uint64_t size) const {
    const Tensor& t = find(name);
    if (t.dims.size() != 1 || t.dims[0] != size)
      throw Error(ErrorCode::ShapeMismatch,
                  fmt::format("{} has shape {}, expected [{}]", name, fmt::join(t.dims, "x"), size));
    check_finite(name, t);
    return Eigen::Map<const RowVector>(t.data.data(), static_cast<Eigen::Index>(size));
  }

 private:
  static void check_finite(const std::string& name, const Tensor& t) {
    for (double v : t.data)
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteWeight, fmt::format("{} has a non-finite entry", name));
  }

  const TensorContainer& c_;
};

Tensor to_tensor(const Matrix& m) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(m(r, c));
  return t;
}

Tensor to_tensor(const RowVector& v) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

}  // namespace

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void write_container(const std::filesystem::path& path, const TensorContainer& container) {
  ByteWriter w;
  w.put_bytes(kMagic);
  const std::string header = container.header.dump();
  w.put<std::uint64_t>(header.size());
  w.put_bytes(header);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(container.tensors.size()));

  const std::size_t elem = dtype_size(container.dtype);
  std::uint64_t offset = 0;
  for (const auto& [name, t] : container.tensors) {
    if (t.element_count() != t.data.size())
      throw Error(ErrorCode::ShapeMismatch, fmt::format("tensor {} data does not match its dims", name));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.put<std::uint64_t>(d);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(container.dtype));
    w.put<std::uint64_t>(offset);
    offset += t.data.size() * elem;
  }
  for (const auto& [name, t] : container.tensors) {
    for (double v : t.data) {
      if (container.dtype == DType::F32)
        w.put<float>(static_cast<float>(v));
      else
        w.put<double>(v);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write {}", path.string()));
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw Error(ErrorCode::Io, fmt::format("short write to {}", path.string()));
}

TensorContainer read_container(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_file(path);
  ByteReader r(bytes);
  if (bytes.size() < kMagic.size() || r.get_bytes(kMagic.size()) != kMagic)
    throw Error(ErrorCode::MalformedFile, fmt::format("{} does not start with ABLK1", path.string()));

  TensorContainer c;
  const auto header_len = r.get<std::uint64_t>();
  if (header_len > bytes.size()) throw Error(ErrorCode::MalformedFile, "header length exceeds file size");
  try {
    c.header = nlohmann::json::parse(r.get_bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, fmt::format("header JSON: {}", e.what()));
  }

  struct Entry {
    std::string name;
    Tensor tensor;
    DType dtype;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  const auto count = r.get<std::uint32_t>();
  std::optional<DType> seen_dtype;
  for (std::uint32_t k = 0; k < count; ++k) {
    Entry e;
    const auto name_len = r.get<std::uint16_t>();
    e.name = std::string(r.get_bytes(name_len));
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t a = 0; a < rank; ++a) e.tensor.dims.push_back(r.get<std::uint64_t>());
    const auto code = r.get<std::uint8_t>();
    if (code != static_cast<std::uint8_t>(DType::F32) && code != static_cast<std::uint8_t>(DType::F64))
      throw Error(ErrorCode::MalformedFile, fmt::format("tensor {} has unknown dtype code {}", e.name, code));
    e.dtype = static_cast<DType>(code);
    seen_dtype = e.dtype;
    e.offset = r.get<std::uint64_t>();
    entries.push_back(std::move(e));
  }

  const std::size_t payload = r.position();
  for (auto& e : entries) {
    const std::uint64_t n = e.tensor.element_count();
    const std::size_t elem = dtype_size(e.dtype);
    if (n > std::numeric_limits<std::uint64_t>::max() / elem || e.offset > bytes.size() ||
        n * elem > bytes.size() - payload || payload + e.offset > bytes.size() - n * elem)
      throw Error(ErrorCode::MalformedFile, fmt::format("tensor {} runs past end of file", e.name));
    const char* src = bytes.data() + payload + e.offset;
    e.tensor.data.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      if (e.dtype == DType::F32) {
        float v;
        std::memcpy(&v, src + i * 4, 4);
        e.tensor.data[i] = v;
      } else {
        std::memcpy(&e.tensor.data[i], src + i * 8, 8);
      }
    }
    if (!c.tensors.emplace(e.name, std::move(e.tensor)).second)
      throw Error(ErrorCode::MalformedFile, fmt::format("duplicate tensor {}", e.name));
  }
  c.dtype = seen_dtype.value_or(DType::F32);
  return c;
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {
      {"architecture", kArchitecturePostLn},
      {"hidden_dim", cfg.hidden_dim},
      {"num_heads", cfg.num_heads},
      {"head_dim", cfg.head_dim},
      {"num_layers", cfg.num_layers},
      {"ffn_dim", cfg.ffn_dim},
      {"ln_epsilon", cfg.ln_epsilon},
      {"vocab_size", cfg.vocab_size},
      {"max_positions", cfg.max_positions},
      {"num_segments", cfg.num_segments},
      {"special_tokens",
       {{"CLS", cfg.special.cls}, {"SEP", cfg.special.sep}, {"MASK", cfg.special.mask}, {"PAD", cfg.special.pad}}},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    const std::string arch = j.value("architecture", std::string(kArchitecturePostLn));
    if (arch != kArchitecturePostLn)
      throw Error(ErrorCode::UnsupportedArchitecture, fmt::format("architecture '{}' (only post_ln is supported)", arch));
    ModelConfig cfg;
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.num_heads = j.at("num_heads").get<int>();
    cfg.head_dim = j.at("head_dim").get<int>();
    cfg.num_layers = j.at("num_layers").get<int>();
    cfg.ffn_dim = j.at("ffn_dim").get<int>();
    cfg.ln_epsilon = j.at("ln_epsilon").get<double>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_positions = j.at("max_positions").get<int>();
    cfg.num_segments = j.at("num_segments").get<int>();
    const auto& sp = j.at("special_tokens");
    cfg.special = {sp.at("CLS").get<std::int64_t>(), sp.at("SEP").get<std::int64_t>(),
                   sp.at("MASK").get<std::int64_t>(), sp.at("PAD").get<std::int64_t>()};
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, fmt::format("config block: {}", e.what()));
  }
}

void save_model(const std::filesystem::path& path, const Model& model, DType dtype) {
  model.validate();
  TensorContainer c;
  c.dtype = dtype;
  c.header = config_to_json(model.config);

  const auto& e = model.embeddings;
  c.tensors["embeddings.token"] = to_tensor(e.token);
  c.tensors["embeddings.position"] = to_tensor(e.position);
  c.tensors["embeddings.segment"] = to_tensor(e.segment);
  c.tensors["embeddings.ln.gamma"] = to_tensor(e.ln_gamma);
  c.tensors["embeddings.ln.beta"] = to_tensor(e.ln_beta);

  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& w = model.layers[k];
    const std::string p = layer_prefix(static_cast<int>(k));
    c.tensors[p + "attention.query.weight"] = to_tensor(w.w_query);
    c.tensors[p + "attention.query.bias"] = to_tensor(w.b_query);
    c.tensors[p + "attention.key.weight"] = to_tensor(w.w_key);
    c.tensors[p + "attention.key.bias"] = to_tensor(w.b_key);
    c.tensors[p + "attention.value.weight"] = to_tensor(w.w_value);
    c.tensors[p + "attention.value.bias"] = to_tensor(w.b_value);
    c.tensors[p + "attention.output.weight"] = to_tensor(w.w_output);
    c.tensors[p + "attention.output.bias"] = to_tensor(w.b_output);
    c.tensors[p + "attention.ln.gamma"] = to_tensor(w.ln_gamma);
    c.tensors[p + "attention.ln.beta"] = to_tensor(w.ln_beta);
    c.tensors[p + "ffn.in.weight"] = to_tensor(w.w_ffn_in);
    c.tensors[p + "ffn.in.bias"] = to_tensor(w.b_ffn_in);
    c.tensors[p + "ffn.out.weight"] = to_tensor(w.w_ffn_out);
    c.tensors[p + "ffn.out.bias"] = to_tensor(w.b_ffn_out);
    c.tensors[p + "ffn.ln.gamma"] = to_tensor(w.ffn_ln_gamma);
    c.tensors[p + "ffn.ln.beta"] = to_tensor(w.ffn_ln_beta);
  }
  write_container(path, c);
}

Model load_model(const std::filesystem::path& path) {
  const TensorContainer c = read_container(path);
  Model model;
  model.config = config_from_json(c.header);
  const ModelConfig& cfg = model.config;
  cfg.validate();

  const TensorSource src(c);
  const std::uint64_t d = cfg.hidden_dim;
  const std::uint64_t ff = cfg.ffn_dim;
  auto& e = model.embeddings;
  e.token = src.matrix("embeddings.token", cfg.vocab_size, d);
  e.position = src.matrix("embeddings.position", cfg.max_positions, d);
  e.segment = src.matrix("embeddings.segment", cfg.num_segments, d);
  e.ln_gamma = src.vector("embeddings.ln.gamma", d);
  e.ln_beta = src.vector("embeddings.ln.beta", d);

  for (int k = 0; k < cfg.num_layers; ++k) {
    const std::string p = layer_prefix(k);
    LayerWeights w;
    w.num_heads = cfg.num_heads;
    w.w_query = src.matrix(p + "attention.query.weight", d, d);
    w.b_query = src.vector(p + "attention.query.bias", d);
    w.w_key = src.matrix(p + "attention.key.weight", d, d);
    w.b_key = src.vector(p + "attention.key.bias", d);
    w.w_value = src.matrix(p + "attention.value.weight", d, d);
    w.b_value = src.vector(p + "attention.value.bias", d);
    w.w_output = src.matrix(p + "attention.output.weight", d, d);
    w.b_output = src.has(p + "attention.output.bias") ? src.vector(p + "attention.output.bias", d)
                                                       : RowVector::Zero(static_cast<Eigen::Index>(d));
    w.ln_gamma = src.vector(p + "attention.ln.gamma", d);
    w.ln_beta = src.vector(p + "attention.ln.beta", d);
    w.w_ffn_in = src.matrix(p + "ffn.in.weight", d, ff);
    w.b_ffn_in = src.vector(p + "ffn.in.bias", ff);
    w.w_ffn_out = src.matrix(p + "ffn.out.weight", ff, d);
    w.b_ffn_out = src.vector(p + "ffn.out.bias", d);
    w.ffn_ln_gamma = src.vector(p + "ffn.ln.gamma", d);
    w.ffn_ln_beta = src.vector(p + "ffn.ln.beta", d);
    model.layers.push_back(std::move(w));
  }
  model.validate();
  return model;
}

void save_reference_activations(const std::filesystem::path& path, const std::vector<ReferenceSequence>& sequences,
                                DType dtype) {
  TensorContainer c;
  c.dtype = dtype;
  nlohmann::json seqs = nlohmann::json::array();
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& ref = sequences[s];
    if (ref.block_outputs.size() != ref.layer_outputs.size())
      throw Error(ErrorCode::InvalidArgument, "block and layer output counts differ");
    seqs.push_back({{"tokens", ref.token_ids}, {"segments", ref.segment_ids}, {"num_layers", ref.layer_outputs.size()}});
    const std::string p = fmt::format("seq.{}.", s);
    c.tensors[p + "embeddings"] = to_tensor(ref.embeddings);
    for (std::size_t k = 0; k < ref.layer_outputs.size(); ++k) {
      c.tensors[fmt::format("{}layers.{}.block_output", p, k)] = to_tensor(ref.block_outputs[k]);
      c.tensors[fmt::format("{}layers.{}.layer_output", p, k)] = to_tensor(ref.layer_outputs[k]);
    }
  }
  c.header = {{"format", "activations"}, {"sequences", seqs}};
  write_container(path, c);
}

std::vector<ReferenceSequence> load_reference_activations(const std::filesystem::path& path) {
  const TensorContainer c = read_container(path);
  const TensorSource src(c);
  std::vector<ReferenceSequence> out;
  try {
    if (c.header.value("format", std::string()) != "activations")
      throw Error(ErrorCode::MalformedFile, fmt::format("{} is not an activation file", path.string()));
    const auto& seqs = c.header.at("sequences");
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      ReferenceSequence ref;
      ref.token_ids = seqs[s].at("tokens").get<std::vector<std::int64_t>>();
      ref.segment_ids = seqs[s].at("segments").get<std::vector<int>>();
      const auto layers = seqs[s].at("num_layers").get<std::size_t>();
      const std::string p = fmt::format("seq.{}.", s);
      const Tensor& emb = src.find(p + "embeddings");
      if (emb.dims.size() != 2 || emb.dims[0] != ref.token_ids.size())
        throw Error(ErrorCode::ShapeMismatch, fmt::format("{}embeddings does not match the token count", p));
      const std::uint64_t n = emb.dims[0];
      const std::uint64_t d = emb.dims[1];
      ref.embeddings = src.matrix(p + "embeddings", n, d);
      for (std::size_t k = 0; k < layers; ++k) {
        ref.block_outputs.push_back(src.matrix(fmt::format("{}layers.{}.block_output", p, k), n, d));
        ref.layer_outputs.push_back(src.matrix(fmt::format("{}layers.{}.layer_output", p, k), n, d));
      }
      out.push_back(std::move(ref));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, fmt::format("activation header: {}", e.what()));
  }
  return out;
}

}  // namespace attnscope
