#include "paratune/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "paratune/ops.hpp"

namespace paratune {

void EncoderConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string("encoder config: ") + name + " must be >= 1");
  };
  positive(layers, "layers");
  positive(hidden, "hidden");
  positive(heads, "heads");
  positive(ff, "ff");
  positive(max_position, "max_position");
  positive(vocab_size, "vocab_size");
  if (hidden % heads != 0) {
    throw std::invalid_argument("encoder config: hidden " + std::to_string(hidden) + " not divisible by heads " +
                                std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("encoder config: dropout must lie in [0,1)");
}

std::size_t EncoderConfig::parameter_count() const {
  const std::size_t h = hidden;
  const std::size_t embeddings = vocab_size * h + max_position * h + 2 * h + 2 * h;
  const std::size_t per_layer = 4 * (h * h + h) + 2 * h + (h * ff + ff) + (ff * h + h) + 2 * h;
  return embeddings + layers * per_layer;
}

std::map<std::string, std::string> EncoderConfig::to_map() const {
  std::ostringstream p;
  p.precision(17);
  p << dropout;
  return {{"layers", std::to_string(layers)},
          {"hidden", std::to_string(hidden)},
          {"heads", std::to_string(heads)},
          {"ff", std::to_string(ff)},
          {"max_position", std::to_string(max_position)},
          {"vocab_size", std::to_string(vocab_size)},
          {"dropout", p.str()}};
}

EncoderConfig EncoderConfig::from_map(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("encoder config: missing key ") + key);
    return it->second;
  };
  EncoderConfig c;
  c.layers = std::stoul(get("layers"));
  c.hidden = std::stoul(get("hidden"));
  c.heads = std::stoul(get("heads"));
  c.ff = std::stoul(get("ff"));
  c.max_position = std::stoul(get("max_position"));
  c.vocab_size = std::stoul(get("vocab_size"));
  c.dropout = std::stod(get("dropout"));
  c.validate();
  return c;
}

namespace nn {

double truncated_normal(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> dist(0.0, sigma);
  for (;;) {
    const double x = dist(rng);
    if (std::fabs(x) <= 2.0 * sigma) return x;
  }
}

void add_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  Tensor w({in, out});
  for (auto& v : w.values) v = truncated_normal(rng);
  store.add(name + ".w", std::move(w));
  store.add(name + ".b", Tensor({out}));
}

Var linear(Tape& tape, ParamStore& store, const std::string& name, Var x) {
  return ops::add_bias(ops::matmul(x, tape.param(store, name + ".w")), tape.param(store, name + ".b"));
}

}  // namespace nn

namespace {

std::string layer_prefix(std::size_t i) { return "layer" + std::to_string(i); }

struct NamedShape {
  std::string name;
  Shape shape;
};

std::vector<NamedShape> encoder_layout(const EncoderConfig& c) {
  const std::size_t h = c.hidden;
  std::vector<NamedShape> out{{"emb.token", {c.vocab_size, h}},
                              {"emb.position", {c.max_position, h}},
                              {"emb.segment", {2, h}},
                              {"emb.ln.gamma", {h}},
                              {"emb.ln.beta", {h}}};
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string p = layer_prefix(i);
    for (const char* proj : {"query", "key", "value", "output"}) {
      out.push_back({p + ".attn." + proj + ".w", {h, h}});
      out.push_back({p + ".attn." + proj + ".b", {h}});
    }
    out.push_back({p + ".attn.ln.gamma", {h}});
    out.push_back({p + ".attn.ln.beta", {h}});
    out.push_back({p + ".ffn.in.w", {h, c.ff}});
    out.push_back({p + ".ffn.in.b", {c.ff}});
    out.push_back({p + ".ffn.out.w", {c.ff, h}});
    out.push_back({p + ".ffn.out.b", {h}});
    out.push_back({p + ".ffn.ln.gamma", {h}});
    out.push_back({p + ".ffn.ln.beta", {h}});
  }
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Var maybe_dropout(Var x, double p, const ForwardMode& mode) {
  if (!mode.train || p <= 0.0) return x;
  if (mode.rng == nullptr) throw std::invalid_argument("encode: train mode with dropout needs an rng");
  return ops::dropout(x, p, *mode.rng);
}

}  // namespace

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  EncoderParams params{config, {}};
  for (auto& [name, shape] : encoder_layout(config)) {
    Tensor t(shape);
    if (ends_with(name, ".gamma")) {
      t.fill(1.0);
    } else if (ends_with(name, ".w") || (name.rfind("emb.", 0) == 0 && shape.size() == 2)) {
      for (auto& v : t.values) v = nn::truncated_normal(rng);
    }
    params.store.add(name, std::move(t));
  }
  return params;
}

bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

EncoderParams strip_heads(const EncoderParams& params) {
  return EncoderParams{params.config, params.store.filtered([](const std::string& n) { return !is_head_param(n); })};
}

Var encode(Tape& tape, EncoderParams& params, const EncodedPair& pair, ForwardMode mode, AttentionTrace* trace) {
  const EncoderConfig& c = params.config;
  ParamStore& store = params.store;
  const std::size_t n = pair.size();
  if (n == 0) throw std::invalid_argument("encode: empty sequence");
  if (n > c.max_position) {
    throw LengthError("encode: sequence of " + std::to_string(n) + " tokens exceeds max_position " +
                      std::to_string(c.max_position));
  }
  if (pair.segments.size() != n) throw DimensionError("encode: segment ids do not match token ids");

  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  Var x = ops::add(ops::add(ops::embedding(tape.param(store, "emb.token"), pair.ids),
                            ops::embedding(tape.param(store, "emb.position"), positions)),
                   ops::embedding(tape.param(store, "emb.segment"), pair.segments));
  x = ops::layer_norm(x, tape.param(store, "emb.ln.gamma"), tape.param(store, "emb.ln.beta"));
  x = maybe_dropout(x, c.dropout, mode);

  std::optional<Var> mask;
  bool any_pad = false;
  for (int id : pair.ids) any_pad = any_pad || id == Vocab::kPad;
  if (any_pad) {
    Tensor m({n, n});
    for (std::size_t q = 0; q < n; ++q) {
      for (std::size_t k = 0; k < n; ++k) {
        if (pair.ids[k] == Vocab::kPad) m.values[q * n + k] = -1e9;
      }
    }
    mask = tape.constant(std::move(m));
  }

  const std::size_t dh = c.hidden / c.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = layer_prefix(l);
    Var q = nn::linear(tape, store, p + ".attn.query", x);
    Var k = nn::linear(tape, store, p + ".attn.key", x);
    Var v = nn::linear(tape, store, p + ".attn.value", x);
    std::vector<Var> heads;
    heads.reserve(c.heads);
    for (std::size_t h = 0; h < c.heads; ++h) {
      Var qh = ops::slice_cols(q, h * dh, dh);
      Var kh = ops::slice_cols(k, h * dh, dh);
      Var vh = ops::slice_cols(v, h * dh, dh);
      Var scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt_dh);
      if (mask) scores = ops::add(scores, *mask);
      Var probs = ops::softmax(scores);
      if (trace) trace->probabilities.push_back(probs.value());
      probs = maybe_dropout(probs, c.dropout, mode);
      heads.push_back(ops::matmul(probs, vh));
    }
    Var attn = nn::linear(tape, store, p + ".attn.output", ops::concat(heads));
    attn = maybe_dropout(attn, c.dropout, mode);
    x = ops::layer_norm(ops::add(x, attn), tape.param(store, p + ".attn.ln.gamma"),
                        tape.param(store, p + ".attn.ln.beta"));

    Var ff = nn::linear(tape, store, p + ".ffn.out", ops::gelu(nn::linear(tape, store, p + ".ffn.in", x)));
    ff = maybe_dropout(ff, c.dropout, mode);
    x = ops::layer_norm(ops::add(x, ff), tape.param(store, p + ".ffn.ln.gamma"), tape.param(store, p + ".ffn.ln.beta"));
  }
  return x;
}

namespace {

constexpr const char* kCheckpointMagic = "paratune-checkpoint";
constexpr int kCheckpointVersion = 1;

void write_f64(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

double read_f64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     const std::map<std::string, std::string>& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& [k, v] : params.config.to_map()) out << k << '=' << v << '\n';
  for (const auto& [k, v] : metadata) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint metadata must be single-line key=value: " + k);
    }
    out << "meta." << k << '=' << v << '\n';
  }
  out << "tensors=" << params.store.size() << '\n';
  out << "end\n";
  for (const auto& p : params.store) {
    out << "tensor " << p.name << ' ' << p.value.rank();
    for (auto d : p.value.shape) out << ' ' << d;
    out << '\n';
    for (double v : p.value.values) write_f64(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != std::string(kCheckpointMagic) + ' ' + std::to_string(kCheckpointVersion)) {
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported header '" + line + "'");
  }
  std::map<std::string, std::string> config_kv, metadata;
  std::size_t count = 0;
  while (std::getline(in, line) && line != "end") {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint " + path.string() + ": bad header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "tensors") {
      count = std::stoul(value);
    } else if (key.rfind("meta.", 0) == 0) {
      metadata[key.substr(5)] = value;
    } else {
      config_kv[key] = value;
    }
  }
  LoadedCheckpoint result{EncoderParams{EncoderConfig::from_map(config_kv), {}}, std::move(metadata)};
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint " + path.string() + ": truncated");
    std::istringstream header(line);
    std::string tag, name;
    std::size_t rank = 0;
    header >> tag >> name >> rank;
    if (tag != "tensor" || !header) throw std::runtime_error("checkpoint " + path.string() + ": bad tensor line '" + line + "'");
    Shape shape(rank);
    for (auto& d : shape) header >> d;
    Tensor t(shape);
    for (auto& v : t.values) v = read_f64(in);
    if (!in) throw std::runtime_error("checkpoint " + path.string() + ": truncated data for " + name);
    result.params.store.add(name, std::move(t));
  }
  for (const auto& [name, shape] : encoder_layout(result.params.config)) {
    auto idx = result.params.store.find(name);
    if (!idx) throw std::runtime_error("checkpoint " + path.string() + ": missing array " + name);
    const Shape& got = result.params.store[*idx].value.shape;
    if (got != shape) {
      throw std::runtime_error("checkpoint " + path.string() + ": array " + name + " has shape " + shape_string(got) +
                               ", config implies " + shape_string(shape));
    }
  }
  return result;
}

}  // namespace paratune
