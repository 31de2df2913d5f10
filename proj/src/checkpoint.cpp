#include "aesim/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace aesim {
namespace {

constexpr char kMagic[8] = {'A', 'E', 'S', 'I', 'M', 'C', 'K', 'P'};
constexpr char kTrailer[8] = {'A', 'E', 'S', 'I', 'M', 'E', 'N', 'D'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path)
      : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw CheckpointError("cannot write " + path.string());
  }

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { little_endian(v, 4); }
  void u64(std::uint64_t v) { little_endian(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void str64(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  template <typename T>
  void payload(std::span<const T> values) {
    for (T v : values) {
      if constexpr (sizeof(T) == 4) {
        u32(std::bit_cast<std::uint32_t>(v));
      } else {
        u64(std::bit_cast<std::uint64_t>(v));
      }
    }
  }

  void finish() {
    out_.flush();
    if (!out_) throw CheckpointError("write failed for " + path_.string());
  }

 private:
  void little_endian(std::uint64_t v, int n) {
    unsigned char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, static_cast<std::size_t>(n));
  }

  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path)
      : in_(path, std::ios::binary) {
    if (!in_) throw CheckpointError("cannot open checkpoint " + path.string());
    in_.seekg(0, std::ios::end);
    remaining_ = static_cast<std::uint64_t>(in_.tellg());
    in_.seekg(0);
  }

  void bytes(void* data, std::size_t n) {
    if (n > remaining_) throw CheckpointError("checkpoint is truncated");
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!in_) throw CheckpointError("checkpoint is truncated");
    remaining_ -= n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(little_endian(4)); }
  std::uint64_t u64() { return little_endian(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::uint64_t n) {
    if (n > remaining_) throw CheckpointError("checkpoint is truncated");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::string str32() { return str(u32()); }
  std::string str64() { return str(u64()); }
  template <typename T>
  void payload(std::span<T> out) {
    if (out.size() > remaining_ / sizeof(T)) {
      throw CheckpointError("checkpoint is truncated");
    }
    for (T& v : out) {
      if constexpr (sizeof(T) == 4) {
        v = std::bit_cast<T>(u32());
      } else {
        v = std::bit_cast<T>(u64());
      }
    }
  }
  void skip(std::uint64_t n) {
    if (n > remaining_) throw CheckpointError("checkpoint is truncated");
    in_.seekg(static_cast<std::streamoff>(n), std::ios::cur);
    remaining_ -= n;
  }

 private:
  std::uint64_t little_endian(int n) {
    unsigned char buf[8];
    bytes(buf, static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }

  std::ifstream in_;
  std::uint64_t remaining_ = 0;
};

std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

DType read_dtype(Reader& in) {
  const std::uint8_t code = in.u8();
  if (code != 1 && code != 2) {
    throw CheckpointError("unknown dtype code " + std::to_string(code));
  }
  return static_cast<DType>(code);
}

struct Header {
  CheckpointInfo info;
  std::vector<std::string> vocab;
};

Header read_header(Reader& in) {
  char magic[8];
  in.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw CheckpointError("not a checkpoint (bad magic bytes)");
  }
  Header h;
  h.info.version = in.u32();
  if (h.info.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(h.info.version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  h.info.dtype = read_dtype(in);
  try {
    h.info.config = EsimConfig::from_json(in.str64());
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  const std::uint64_t count = in.u64();
  for (std::uint64_t i = 0; i < count; ++i) h.vocab.push_back(in.str32());
  h.info.vocab_size = h.vocab.size();
  return h;
}

TensorEntry read_entry(Reader& in) {
  TensorEntry e;
  e.name = in.str32();
  e.dtype = read_dtype(in);
  const std::uint32_t rank = in.u32();
  if (rank == 0 || rank > 8) {
    throw CheckpointError("tensor " + e.name + " has invalid rank");
  }
  for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.u64());
  return e;
}

}  // namespace

std::size_t CheckpointInfo::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path,
                     const EsimModel<T>& model, const Vocab& vocab,
                     const AdamState<T>* optimizer,
                     const std::mt19937_64* rng) {
  if (vocab.size() != model.config.vocab_size) {
    throw CheckpointError("vocabulary of " + std::to_string(vocab.size()) +
                          " tokens does not match model vocab_size " +
                          std::to_string(model.config.vocab_size));
  }
  const ParameterList<T> params = model.parameters();
  Writer out(path);
  out.bytes(kMagic, 8);
  out.u32(kCheckpointVersion);
  out.u8(static_cast<std::uint8_t>(dtype_of<T>()));
  out.str64(model.config.to_json());
  out.u64(vocab.size());
  for (const auto& tok : vocab.tokens()) out.str32(tok);
  out.u64(params.size());
  for (const auto& p : params) {
    out.str32(p.name);
    out.u8(static_cast<std::uint8_t>(dtype_of<T>()));
    out.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) out.u64(d);
    out.payload<T>(p.value.data());
  }
  out.u8(optimizer != nullptr ? 1 : 0);
  if (optimizer != nullptr) {
    if (optimizer->m.size() != params.size()) {
      throw CheckpointError("optimizer state does not match parameters");
    }
    const AdamConfig& c = optimizer->config;
    for (double v : {c.lr, c.beta1, c.beta2, c.eps, c.max_grad_norm}) out.f64(v);
    out.u64(optimizer->step);
    for (std::size_t k = 0; k < params.size(); ++k) {
      out.payload<T>(optimizer->m[k]);
      out.payload<T>(optimizer->v[k]);
    }
  }
  out.u8(rng != nullptr ? 1 : 0);
  if (rng != nullptr) {
    std::ostringstream state;
    state << *rng;
    out.str64(state.str());
  }
  out.bytes(kTrailer, 8);
  out.finish();
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  Reader in(path);
  Header header = read_header(in);
  if (header.info.dtype != dtype_of<T>()) {
    throw CheckpointError(std::string("checkpoint precision is ") +
                          (header.info.dtype == DType::kF32 ? "f32" : "f64") +
                          ", requested the other");
  }
  Checkpoint<T> ckpt;
  try {
    ckpt.vocab = Vocab::from_tokens(header.vocab);
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
  if (ckpt.vocab.size() != header.info.config.vocab_size) {
    throw CheckpointError("vocabulary size does not match config");
  }
  std::mt19937_64 scratch(0);
  ckpt.model = EsimModel<T>::init(header.info.config, scratch);
  const ParameterList<T> params = ckpt.model.parameters();
  const std::uint64_t count = in.u64();
  if (count != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) +
                          " tensors, config expects " +
                          std::to_string(params.size()));
  }
  for (const auto& p : params) {
    const TensorEntry e = read_entry(in);
    if (e.name != p.name || e.shape != p.value.shape() ||
        e.dtype != dtype_of<T>()) {
      throw CheckpointError("tensor " + e.name + " " + shape_str(e.shape) +
                            " does not match expected " + p.name + " " +
                            shape_str(p.value.shape()));
    }
    Tensor<T> t = p.value;
    in.payload<T>(t.data());
  }
  if (in.u8() != 0) {
    AdamConfig c;
    c.lr = in.f64();
    c.beta1 = in.f64();
    c.beta2 = in.f64();
    c.eps = in.f64();
    c.max_grad_norm = in.f64();
    AdamState<T> state = AdamState<T>::init(params, c);
    state.step = in.u64();
    for (std::size_t k = 0; k < params.size(); ++k) {
      in.payload<T>(std::span<T>(state.m[k]));
      in.payload<T>(std::span<T>(state.v[k]));
    }
    ckpt.optimizer = std::move(state);
  }
  if (in.u8() != 0) {
    std::istringstream state(in.str64());
    std::mt19937_64 rng;
    state >> rng;
    if (!state) throw CheckpointError("corrupt generator state");
    ckpt.rng = rng;
  }
  char trailer[8];
  in.bytes(trailer, 8);
  if (std::memcmp(trailer, kTrailer, 8) != 0) {
    throw CheckpointError("checkpoint trailer missing or corrupt");
  }
  return ckpt;
}

CheckpointInfo inspect_checkpoint(const std::filesystem::path& path) {
  Reader in(path);
  Header header = read_header(in);
  const std::uint64_t count = in.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorEntry e = read_entry(in);
    in.skip(e.numel() * dtype_size(e.dtype));
    header.info.tensors.push_back(std::move(e));
  }
  header.info.has_optimizer = in.u8() != 0;
  if (header.info.has_optimizer) {
    in.skip(5 * 8 + 8);
    for (const auto& e : header.info.tensors) {
      in.skip(2 * e.numel() * dtype_size(e.dtype));
    }
  }
  header.info.has_rng = in.u8() != 0;
  if (header.info.has_rng) in.skip(in.u64());
  char trailer[8];
  in.bytes(trailer, 8);
  if (std::memcmp(trailer, kTrailer, 8) != 0) {
    throw CheckpointError("checkpoint trailer missing or corrupt");
  }
  return header.info;
}

template void save_checkpoint(const std::filesystem::path&,
                              const EsimModel<float>&, const Vocab&,
                              const AdamState<float>*, const std::mt19937_64*);
template void save_checkpoint(const std::filesystem::path&,
                              const EsimModel<double>&, const Vocab&,
                              const AdamState<double>*, const std::mt19937_64*);
template Checkpoint<float> load_checkpoint(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace aesim
