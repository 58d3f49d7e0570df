#include "lace/denoiser.hpp"

#include <cmath>
#include <cstring>

#include <zlib.h>

#include "lace/error.hpp"
#include "lace/io_util.hpp"
#include "lace/rng.hpp"

namespace lace {

void DenoiserConfig::validate() const {
  if (input_dim < 1 || seq_len < 1 || embed_dim < 1 || n_layers < 0 || n_heads < 1 ||
      ffn_dim < 1 || time_embed_dim < 2) {
    throw Error(ErrorCode::kConfig, "denoiser dimensions must be positive");
  }
  if (embed_dim % n_heads != 0) {
    throw Error(ErrorCode::kConfig, "embed_dim must be divisible by n_heads");
  }
  if (time_embed_dim % 2 != 0) throw Error(ErrorCode::kConfig, "time_embed_dim must be even");
}

nlohmann::json DenoiserConfig::to_json() const {
  return {{"input_dim", input_dim}, {"seq_len", seq_len},   {"embed_dim", embed_dim},
          {"n_layers", n_layers},   {"n_heads", n_heads},   {"ffn_dim", ffn_dim},
          {"time_embed_dim", time_embed_dim}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.seq_len = j.at("seq_len").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.time_embed_dim = j.at("time_embed_dim").get<int>();
  c.validate();
  return c;
}

Eigen::MatrixXd timestep_embedding(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  Eigen::MatrixXd emb(static_cast<Eigen::Index>(t.size()), dim);
  for (size_t r = 0; r < t.size(); ++r) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      emb(static_cast<Eigen::Index>(r), k) = std::sin(t[r] * freq);
      emb(static_cast<Eigen::Index>(r), half + k) = std::cos(t[r] * freq);
    }
  }
  return emb;
}

namespace {

enum class Init { kFanIn, kZero };

struct Builder {
  std::vector<ParamTensor>& out;
  Rng& rng;

  void add(std::string name, int rows, int cols, Init init) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(rows, cols);
    if (init == Init::kFanIn) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    }
    out.push_back({std::move(name), std::move(m)});
  }
  // weight (fan-in init) + zero bias
  void linear(const std::string& name, int in, int outd, Init init = Init::kFanIn) {
    add(name + ".w", in, outd, init);
    add(name + ".b", 1, outd, Init::kZero);
  }
  void adaln(const std::string& name, int td, int e) {
    for (const char* part : {".gamma", ".beta"}) {
      linear(name + part + ".hidden", td, td);
      linear(name + part + ".out", td, e, Init::kZero);
    }
  }
};

}  // namespace

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  Builder b{params_, rng};
  const int d = config_.input_dim, e = config_.embed_dim, td = config_.time_embed_dim;
  b.linear("encoder.0", d, e);
  b.linear("encoder.1", e, e);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    b.adaln(p + ".norm1", td, e);
    b.linear(p + ".attn.q", e, e);
    b.linear(p + ".attn.k", e, e);
    b.linear(p + ".attn.v", e, e);
    b.linear(p + ".attn.o", e, e);
    b.adaln(p + ".norm2", td, e);
    b.linear(p + ".ffn.0", e, config_.ffn_dim);
    b.linear(p + ".ffn.1", config_.ffn_dim, e);
  }
  b.adaln("final_norm", td, e);
  b.linear("decoder.0", e, e);
  b.linear("decoder.1", e, d);
}

size_t Denoiser::num_scalars() const {
  size_t n = 0;
  for (const auto& p : params_) n += static_cast<size_t>(p.value.size());
  return n;
}

int Denoiser::index(const std::string& name) const {
  for (size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<int>(i);
  }
  throw Error(ErrorCode::kConfig, "no parameter named " + name);
}

void Denoiser::zero_output_layer() {
  params_[static_cast<size_t>(index("decoder.1.w"))].value.setZero();
  params_[static_cast<size_t>(index("decoder.1.b"))].value.setZero();
}

void Denoiser::check_finite() const {
  for (const auto& p : params_) {
    if (!p.value.allFinite()) {
      throw Error(ErrorCode::kNonFinite, "parameter " + p.name + " holds a non-finite value");
    }
  }
}

Denoiser::Pass Denoiser::forward(ad::Tape& tape, const Eigen::MatrixXd& x,
                                 const std::vector<int>& t, bool input_grad,
                                 bool param_grads) const {
  check_finite();
  const int seq = config_.seq_len;
  if (x.cols() != config_.input_dim || x.rows() == 0 || x.rows() % seq != 0 ||
      static_cast<size_t>(x.rows() / seq) != t.size()) {
    throw Error(ErrorCode::kShapeMismatch, "denoiser input must be (items * L) x (N + 5) with one timestep per item");
  }
  Pass pass;
  pass.input = input_grad ? tape.leaf(x) : tape.constant(x);
  pass.params.reserve(params_.size());
  for (const auto& p : params_) {
    pass.params.push_back(param_grads ? tape.leaf(p.value) : tape.constant(p.value));
  }
  size_t cursor = 0;
  auto next = [&] { return pass.params[cursor++]; };
  auto linear = [&](ad::Var in) {
    ad::Var w = next();
    ad::Var b = next();
    return tape.affine(in, w, b);
  };
  auto mlp = [&](ad::Var in) { return linear(tape.silu(linear(in))); };

  const ad::Var temb = tape.constant(timestep_embedding(t, config_.time_embed_dim));
  auto adaln = [&](ad::Var h) {
    ad::Var gamma = mlp(temb);
    ad::Var beta = mlp(temb);
    return tape.modulate(tape.layer_norm(h), gamma, beta, seq);
  };

  ad::Var h = mlp(pass.input);
  for (int l = 0; l < config_.n_layers; ++l) {
    ad::Var a = adaln(h);
    ad::Var q = linear(a);
    ad::Var k = linear(a);
    ad::Var v = linear(a);
    h = tape.add(h, linear(tape.attention(q, k, v, seq, config_.n_heads)));
    h = tape.add(h, mlp(adaln(h)));
  }
  pass.output = mlp(adaln(h));
  return pass;
}

Eigen::MatrixXd Denoiser::predict(const Eigen::MatrixXd& x, const std::vector<int>& t) const {
  ad::Tape tape;
  Pass pass = forward(tape, x, t, false, false);
  return tape.value(pass.output);
}

Denoiser::Gradients Denoiser::backward(ad::Tape& tape, const Pass& pass,
                                       const Eigen::MatrixXd& output_grad) const {
  tape.backward(pass.output, output_grad);
  Gradients g;
  g.params.reserve(pass.params.size());
  for (ad::Var v : pass.params) g.params.push_back(tape.grad(v));
  if (tape.requires_grad(pass.input)) g.input = tape.grad(pass.input);
  return g;
}

Eigen::MatrixXd adaln_reference(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gamma,
                                const Eigen::RowVectorXd& beta, double eps) {
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double sd = std::sqrt(var + eps);
    y.row(r) = ((1.0 + gamma.array()) * ((x.row(r).array() - mu) / sd) + beta.array()).matrix();
  }
  return y;
}

// ---- checkpoint container ----

namespace {

constexpr char kMagic[8] = {'L', 'A', 'C', 'E', 'C', 'K', 'P', 'T'};

void put_u32(std::string& s, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) s.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) s.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}
std::uint64_t get_le(const std::string& s, size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int k = 0; k < bytes; ++k) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + static_cast<size_t>(k)])) << (8 * k);
  }
  return v;
}
std::uint32_t crc_of(const std::string& s, size_t len) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(len)));
}

}  // namespace

void save_checkpoint(const Denoiser& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path) {
  nlohmann::json header = {{"config", model.config().to_json()},
                           {"num_classes", meta.num_classes},
                           {"max_len", meta.max_len},
                           {"schedule_hash", meta.schedule_hash},
                           {"extra", meta.extra.is_null() ? nlohmann::json::object() : meta.extra}};
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& p : model.params()) {
    tensors.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  }
  header["params"] = std::move(tensors);
  const std::string header_text = header.dump();

  std::string blob(kMagic, sizeof(kMagic));
  put_u32(blob, kCheckpointVersion);
  put_u64(blob, header_text.size());
  blob += header_text;
  for (const auto& p : model.params()) {
    // row-major order, independent of Eigen's storage layout
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        std::uint64_t bits;
        const double v = p.value(r, c);
        std::memcpy(&bits, &v, sizeof(bits));
        put_u64(blob, bits);
      }
    }
  }
  put_u32(blob, crc_of(blob, blob.size()));
  write_file_atomic(path, blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string blob = read_file(path);
  if (blob.size() < sizeof(kMagic) + 4 + 8 + 4 || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kCheckpointCorrupt, path.string() + " is not a checkpoint file");
  }
  const auto version = static_cast<std::uint32_t>(get_le(blob, 8, 4));
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kCheckpointVersion, "checkpoint format version " + std::to_string(version) +
                                                   " is not supported (expected " +
                                                   std::to_string(kCheckpointVersion) + ")");
  }
  const size_t body = blob.size() - 4;
  if (crc_of(blob, body) != static_cast<std::uint32_t>(get_le(blob, body, 4))) {
    throw Error(ErrorCode::kCheckpointCorrupt, "checksum mismatch in " + path.string());
  }
  const auto header_len = static_cast<size_t>(get_le(blob, 12, 8));
  if (20 + header_len > body) throw Error(ErrorCode::kCheckpointCorrupt, "truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(20, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointCorrupt, std::string("bad checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  const DenoiserConfig config = DenoiserConfig::from_json(header.at("config"));
  ckpt.model = Denoiser(config, 0);
  ckpt.meta.num_classes = header.at("num_classes").get<int>();
  ckpt.meta.max_len = header.at("max_len").get<int>();
  ckpt.meta.schedule_hash = header.at("schedule_hash").get<std::uint32_t>();
  ckpt.meta.extra = header.at("extra");

  auto& params = ckpt.model.params();
  const auto& tensors = header.at("params");
  if (tensors.size() != params.size()) {
    throw Error(ErrorCode::kCheckpointCorrupt, "parameter count does not match the architecture");
  }
  size_t off = 20 + header_len;
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (tensors[i].at("name").get<std::string>() != p.name ||
        tensors[i].at("rows").get<Eigen::Index>() != p.value.rows() ||
        tensors[i].at("cols").get<Eigen::Index>() != p.value.cols()) {
      throw Error(ErrorCode::kCheckpointCorrupt, "tensor " + p.name + " does not match the architecture");
    }
    const size_t need = static_cast<size_t>(p.value.size()) * 8;
    if (off + need > body) throw Error(ErrorCode::kCheckpointCorrupt, "truncated parameter data");
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const std::uint64_t bits = get_le(blob, off, 8);
        std::memcpy(&p.value(r, c), &bits, sizeof(bits));
        off += 8;
      }
    }
  }
  if (off != body) throw Error(ErrorCode::kCheckpointCorrupt, "trailing bytes in checkpoint");
  return ckpt;
}

void check_checkpoint_shape(const Checkpoint& ckpt, int num_classes, int max_len) {
  if (ckpt.meta.num_classes != num_classes || ckpt.model.config().input_dim != num_classes + 5) {
    throw Error(ErrorCode::kConfig, "checkpoint was trained with N=" + std::to_string(ckpt.meta.num_classes) +
                                        ", data has N=" + std::to_string(num_classes));
  }
  if (ckpt.meta.max_len != max_len || ckpt.model.config().seq_len != max_len) {
    throw Error(ErrorCode::kConfig, "checkpoint was trained with L=" + std::to_string(ckpt.meta.max_len) +
                                        ", data has L=" + std::to_string(max_len));
  }
}

}  // namespace lace
