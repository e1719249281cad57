#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "citesum/autograd.hpp"
#include "citesum/corpus.hpp"
#include "citesum/errors.hpp"
#include "citesum/rng.hpp"

namespace citesum::model {

using ad::Index;
using ad::Matrix;
using ad::Tape;
using ad::Var;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 64;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t attention_heads = 4;
  std::size_t feedforward_dim = 256;
  std::size_t max_positions = 512;
  double encoder_dropout = 0.0;
  double decoder_dropout = 0.0;

  void validate() const {
    if (vocab_size == 0) throw ValidationError("vocab_size must be positive");
    if (model_dim == 0 || model_dim % attention_heads != 0)
      throw ValidationError("model_dim must be a positive multiple of attention_heads");
    if (encoder_layers == 0 || decoder_layers == 0)
      throw ValidationError("layer counts must be positive");
    if (encoder_dropout < 0.0 || encoder_dropout >= 1.0 || decoder_dropout < 0.0 ||
        decoder_dropout >= 1.0)
      throw ValidationError("dropout must lie in [0,1)");
  }
};

// ---------------------------------------------------------------------------
// Vocabulary

struct Vocabulary {
  static constexpr Index kPad = 0;
  static constexpr Index kBos = 1;
  static constexpr Index kEos = 2;
  static constexpr Index kUnk = 3;

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, Index> token_to_id;

  static Vocabulary build(const std::vector<corpus::Document>& docs) {
    std::map<std::string, std::size_t> freq;
    auto count = [&freq](const std::string& text) {
      for (auto& t : corpus::tokenize(text)) ++freq[t];
    };
    for (const auto& d : docs) {
      count(d.abstract_text);
      count(d.introduction);
      for (const auto& s : d.body_sentences) count(s);
    }
    std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    v.id_to_token = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (auto& [tok, _] : items) v.id_to_token.push_back(tok);
    for (std::size_t i = 0; i < v.id_to_token.size(); ++i)
      v.token_to_id[v.id_to_token[i]] = static_cast<Index>(i);
    return v;
  }

  std::size_t size() const { return id_to_token.size(); }

  Index id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }

  std::vector<Index> encode(const std::vector<std::string>& tokens) const {
    std::vector<Index> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id_of(t));
    return ids;
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : id_to_token) {
      h = hash_combine(h, hash_str(t));
    }
    return h;
  }
};

// ---------------------------------------------------------------------------
// Parameters

enum class ParamGroup : int { encoder = 0, decoder = 1 };

struct Parameter {
  std::string name;
  Matrix value;
  Matrix adam_m, adam_v;  // optimizer moments live with the parameter
  ParamGroup group = ParamGroup::encoder;
};

class ParamStore {
 public:
  std::size_t add(std::string name, Index rows, Index cols, ParamGroup group,
                  Matrix init) {
    Parameter p;
    p.name = std::move(name);
    p.value = std::move(init);
    if (p.value.rows() != rows || p.value.cols() != cols)
      throw ShapeError("parameter init shape mismatch for " + p.name);
    p.adam_m = Matrix::Zero(rows, cols);
    p.adam_v = Matrix::Zero(rows, cols);
    p.group = group;
    index_[p.name] = params_.size();
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw KeyError("unknown parameter: " + name);
    return it->second;
  }

  void save_values(std::ostream& out, std::uint64_t step) const {
    const char magic[8] = {'C', 'S', 'C', 'K', 'P', 'T', '0', '1'};
    out.write(magic, 8);
    write_u64(out, step);
    write_u64(out, params_.size());
    for (const auto& p : params_) {
      write_u64(out, p.name.size());
      out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      write_u64(out, static_cast<std::uint64_t>(p.value.rows()));
      write_u64(out, static_cast<std::uint64_t>(p.value.cols()));
      write_matrix(out, p.value);
      write_matrix(out, p.adam_m);
      write_matrix(out, p.adam_v);
    }
  }

  std::uint64_t load_values(std::istream& in) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "CSCKPT01")
      throw ParseError("bad checkpoint magic");
    const std::uint64_t step = read_u64(in);
    const std::uint64_t count = read_u64(in);
    if (count != params_.size())
      throw ValidationError("checkpoint parameter count mismatch");
    for (auto& p : params_) {
      const std::uint64_t name_len = read_u64(in);
      std::string name(name_len, '\0');
      in.read(name.data(), static_cast<std::streamsize>(name_len));
      if (name != p.name) throw ValidationError("checkpoint parameter order mismatch: " + name);
      const auto rows = static_cast<Index>(read_u64(in));
      const auto cols = static_cast<Index>(read_u64(in));
      if (rows != p.value.rows() || cols != p.value.cols())
        throw ValidationError("checkpoint shape mismatch for " + name);
      read_matrix(in, p.value);
      read_matrix(in, p.adam_m);
      read_matrix(in, p.adam_v);
    }
    if (!in) throw ParseError("truncated checkpoint");
    return step;
  }

 private:
  static void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  static void write_matrix(std::ostream& out, const Matrix& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  static void read_matrix(std::istream& in, Matrix& m) {
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
  }

  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Model

struct EncoderOutput {
  Var token_reps;  // seq_len x model_dim
  Var doc_rep;     // 1 x model_dim
  std::vector<char> attention_mask;
};

struct DecoderContext {
  Var memory;  // concatenated source + reference token representations
  std::vector<char> memory_mask;
  // (doc slot, token position) per memory row; slot 0 = source, 1.. = refs.
  std::vector<std::pair<int, Index>> provenance;
};

/// Per-tape view of all parameters as leaf Vars.
struct Binding {
  std::vector<Var> vars;
  Var operator[](std::size_t i) const { return vars[i]; }
};

/// Training-time dropout stream. Masks are drawn in call order from a seed
/// derived per step, so runs stay bit-reproducible. Null pointer or a zero
/// rate means no dropout (evaluation mode draws nothing).
struct DropoutState {
  Rng rng;
  explicit DropoutState(std::uint64_t seed) : rng(seed) {}

  Var apply(Var x, double rate) {
    if (rate <= 0.0) return x;
    const double keep = 1.0 - rate;
    Matrix mask(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i)
      for (Index j = 0; j < x.cols(); ++j)
        mask(i, j) = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    return ad::dropout_mask(x, mask);
  }
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(init_seed, "model_init"));
    const auto dim = static_cast<Index>(cfg_.model_dim);
    const auto ffn = static_cast<Index>(cfg_.feedforward_dim);
    const auto vocab = static_cast<Index>(cfg_.vocab_size);

    auto gauss = [&rng](Index r, Index c, double stddev) {
      Matrix m(r, c);
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = stddev * rng.gaussian();
      return m;
    };
    auto xavier = [&gauss](Index r, Index c) {
      return gauss(r, c, std::sqrt(2.0 / static_cast<double>(r + c)));
    };
    auto zeros = [](Index r, Index c) { return Matrix::Zero(r, c); };
    auto ones = [](Index r, Index c) { return Matrix::Ones(r, c); };

    auto addp = [this](std::string name, ParamGroup g, Matrix m) {
      const Index r = m.rows(), c = m.cols();
      return store_.add(std::move(name), r, c, g, std::move(m));
    };

    tok_emb_ = addp("emb.tok", ParamGroup::encoder, gauss(vocab, dim, 0.1));
    pos_emb_ = addp("emb.pos", ParamGroup::encoder,
                    gauss(static_cast<Index>(cfg_.max_positions), dim, 0.1));
    seg_emb_ = addp("emb.seg", ParamGroup::encoder, gauss(2, dim, 0.1));

    auto add_attention = [&](const std::string& prefix, ParamGroup g, AttnParams& a) {
      a.wq = addp(prefix + ".wq", g, xavier(dim, dim));
      a.bq = addp(prefix + ".bq", g, zeros(1, dim));
      a.wk = addp(prefix + ".wk", g, xavier(dim, dim));
      a.bk = addp(prefix + ".bk", g, zeros(1, dim));
      a.wv = addp(prefix + ".wv", g, xavier(dim, dim));
      a.bv = addp(prefix + ".bv", g, zeros(1, dim));
      a.wo = addp(prefix + ".wo", g, xavier(dim, dim));
      a.bo = addp(prefix + ".bo", g, zeros(1, dim));
    };
    auto add_ffn = [&](const std::string& prefix, ParamGroup g, FfnParams& f) {
      f.w1 = addp(prefix + ".w1", g, xavier(dim, ffn));
      f.b1 = addp(prefix + ".b1", g, zeros(1, ffn));
      f.w2 = addp(prefix + ".w2", g, xavier(ffn, dim));
      f.b2 = addp(prefix + ".b2", g, zeros(1, dim));
    };
    auto add_ln = [&](const std::string& prefix, ParamGroup g, LnParams& l) {
      l.gain = addp(prefix + ".g", g, ones(1, dim));
      l.bias = addp(prefix + ".b", g, zeros(1, dim));
    };

    enc_.resize(cfg_.encoder_layers);
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
      const std::string p = "enc.l" + std::to_string(l);
      add_ln(p + ".ln1", ParamGroup::encoder, enc_[l].ln1);
      add_attention(p + ".attn", ParamGroup::encoder, enc_[l].attn);
      add_ln(p + ".ln2", ParamGroup::encoder, enc_[l].ln2);
      add_ffn(p + ".ffn", ParamGroup::encoder, enc_[l].ffn);
    }
    add_ln("enc.final_ln", ParamGroup::encoder, enc_final_ln_);

    pool_w_ = addp("pool.w", ParamGroup::encoder, xavier(2 * dim, dim));
    pool_b_ = addp("pool.b", ParamGroup::encoder, zeros(1, dim));

    dec_.resize(cfg_.decoder_layers);
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
      const std::string p = "dec.l" + std::to_string(l);
      add_attention(p + ".self", ParamGroup::decoder, dec_[l].self_attn);
      add_ln(p + ".ln1", ParamGroup::decoder, dec_[l].ln1);
      add_attention(p + ".cross", ParamGroup::decoder, dec_[l].cross_attn);
      add_ln(p + ".ln2", ParamGroup::decoder, dec_[l].ln2);
      add_ffn(p + ".ffn", ParamGroup::decoder, dec_[l].ffn);
      add_ln(p + ".ln3", ParamGroup::decoder, dec_[l].ln3);
    }
    out_w_ = addp("out.w", ParamGroup::decoder, xavier(dim, vocab));
    out_b_ = addp("out.b", ParamGroup::decoder, zeros(1, vocab));
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  Binding bind(Tape& tape) const {
    Binding b;
    b.vars.reserve(store_.size());
    for (std::size_t i = 0; i < store_.size(); ++i)
      b.vars.push_back(tape.leaf(store_[i].value, true));
    return b;
  }

  /// Token + position + segment embedding, row p = E_tok[id_p] + E_pos[p] +
  /// E_seg[segment].
  Var embed_tokens(const Binding& b, const std::vector<Index>& ids,
                   int segment_id) const {
    if (ids.empty()) throw ShapeError("embed_tokens: empty id list");
    if (ids.size() > cfg_.max_positions)
      throw RangeError("embed_tokens: sequence exceeds max_positions");
    for (Index id : ids)
      if (id < 0 || id >= static_cast<Index>(cfg_.vocab_size))
        throw RangeError("embed_tokens: token id out of range");
    if (segment_id < 0 || segment_id > 1)
      throw RangeError("embed_tokens: segment must be 0 or 1");
    Var tok = ad::gather_rows(b[tok_emb_], ids);
    Var pos = ad::slice_rows(b[pos_emb_], 0, static_cast<Index>(ids.size()));
    Var seg = ad::gather_rows(b[seg_emb_], {static_cast<Index>(segment_id)});
    return ad::add_rowvec(ad::add(tok, pos), seg);
  }

  /// Pre-norm transformer encoder over already-embedded input; doc_rep is
  /// max/mean pooled over unmasked positions and projected back to dim.
  /// `dropout` is the training-time stream; evaluation passes nothing.
  EncoderOutput encode(const Binding& b, Var embedded,
                       const std::vector<char>& mask,
                       DropoutState* dropout = nullptr) const {
    if (static_cast<Index>(mask.size()) != embedded.rows())
      throw ShapeError("encode: mask length mismatch");
    const Matrix key_bias = key_mask_bias(embedded.rows(), mask);
    auto drop = [&](Var v) {
      return dropout ? dropout->apply(v, cfg_.encoder_dropout) : v;
    };
    Var x = embedded;
    for (const auto& layer : enc_) {
      Var a = ad::layer_norm_rows(x, b[layer.ln1.gain], b[layer.ln1.bias]);
      x = ad::add(x, drop(attention(b, layer.attn, a, a, key_bias)));
      Var f = ad::layer_norm_rows(x, b[layer.ln2.gain], b[layer.ln2.bias]);
      x = ad::add(x, drop(ffn(b, layer.ffn, f)));
    }
    x = ad::layer_norm_rows(x, b[enc_final_ln_.gain], b[enc_final_ln_.bias]);
    EncoderOutput out;
    out.token_reps = x;
    out.doc_rep = pool(b, x, mask);
    out.attention_mask = mask;
    return out;
  }

  /// Raw token-embedding rows (used for context-free token nodes).
  Var token_embedding_rows(const Binding& b, const std::vector<Index>& ids) const {
    return ad::gather_rows(b[tok_emb_], ids);
  }

  /// h_d = FFN([max(h_d{*}); mean(h_d{*})]) over unmasked rows.
  Var pool(const Binding& b, Var token_reps,
           const std::vector<char>& mask) const {
    Var mx = ad::masked_row_max(token_reps, mask);
    Var mn = ad::masked_row_mean(token_reps, mask);
    return ad::linear(ad::hstack({mx, mn}), b[pool_w_], b[pool_b_]);
  }

  /// Decoder stack in the residual-then-normalize order, causal self
  /// attention, cross attention over the context memory, feed forward.
  /// Returns next-token logits for every prefix position.
  Var decoder_step(const Binding& b, const DecoderContext& ctx,
                   Var prefix_embeddings, DropoutState* dropout = nullptr) const {
    if (prefix_embeddings.rows() < 1) throw ShapeError("decoder_step: empty prefix");
    if (ctx.memory.rows() < 1) throw ShapeError("decoder_step: empty memory");
    const Index t = prefix_embeddings.rows();
    Matrix causal_bias = Matrix::Zero(t, t);
    for (Index i = 0; i < t; ++i)
      for (Index j = i + 1; j < t; ++j) causal_bias(i, j) = kMaskedScore;
    Matrix mem_bias_row = key_mask_bias(ctx.memory.rows(), ctx.memory_mask);
    Matrix mem_bias(t, ctx.memory.rows());
    for (Index i = 0; i < t; ++i) mem_bias.row(i) = mem_bias_row.row(0);
    auto drop = [&](Var v) {
      return dropout ? dropout->apply(v, cfg_.decoder_dropout) : v;
    };

    Var y = prefix_embeddings;
    for (const auto& layer : dec_) {
      Var s = drop(attention(b, layer.self_attn, y, y, causal_bias));
      y = ad::layer_norm_rows(ad::add(y, s), b[layer.ln1.gain], b[layer.ln1.bias]);
      Var c = drop(attention(b, layer.cross_attn, y, ctx.memory, mem_bias));
      y = ad::layer_norm_rows(ad::add(y, c), b[layer.ln2.gain], b[layer.ln2.bias]);
      Var f = drop(ffn(b, layer.ffn, y));
      y = ad::layer_norm_rows(ad::add(y, f), b[layer.ln3.gain], b[layer.ln3.bias]);
    }
    return ad::linear(y, b[out_w_], b[out_b_]);
  }

 private:
  struct AttnParams {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct FfnParams {
    std::size_t w1, b1, w2, b2;
  };
  struct LnParams {
    std::size_t gain, bias;
  };
  struct EncoderLayer {
    LnParams ln1;
    AttnParams attn;
    LnParams ln2;
    FfnParams ffn;
  };
  struct DecoderLayer {
    AttnParams self_attn;
    LnParams ln1;
    AttnParams cross_attn;
    LnParams ln2;
    FfnParams ffn;
    LnParams ln3;
  };

  static constexpr double kMaskedScore = -1e9;

  static Matrix key_mask_bias(Index rows, const std::vector<char>& mask) {
    Matrix bias = Matrix::Zero(1, rows);
    for (Index j = 0; j < rows; ++j)
      if (!mask[static_cast<std::size_t>(j)]) bias(0, j) = kMaskedScore;
    return bias;
  }

  /// Multi-head scaled dot-product attention. `score_bias` is either a full
  /// Tq x Tk matrix or a 1 x Tk key-mask row broadcast over queries.
  Var attention(const Binding& b, const AttnParams& p, Var q_in, Var kv_in,
                const Matrix& score_bias) const {
    const auto heads = static_cast<Index>(cfg_.attention_heads);
    const Index dim = q_in.cols();
    const Index dh = dim / heads;
    Var q = ad::linear(q_in, b[p.wq], b[p.bq]);
    Var k = ad::linear(kv_in, b[p.wk], b[p.bk]);
    Var v = ad::linear(kv_in, b[p.wv], b[p.bv]);
    Matrix bias;
    if (score_bias.rows() == 1 && q_in.rows() != 1) {
      bias = Matrix(q_in.rows(), kv_in.rows());
      for (Index i = 0; i < q_in.rows(); ++i) bias.row(i) = score_bias.row(0);
    } else {
      bias = score_bias;
    }
    std::vector<Var> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (Index h = 0; h < heads; ++h) {
      Var qh = ad::slice_cols(q, h * dh, dh);
      Var kh = ad::slice_cols(k, h * dh, dh);
      Var vh = ad::slice_cols(v, h * dh, dh);
      Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dh);
      Var attn = ad::softmax_rows(ad::add_const(scores, bias));
      head_outs.push_back(ad::matmul(attn, vh));
    }
    Var concat = heads == 1 ? head_outs[0] : ad::hstack(head_outs);
    return ad::linear(concat, b[p.wo], b[p.bo]);
  }

  Var ffn(const Binding& b, const FfnParams& p, Var x) const {
    return ad::linear(ad::gelu(ad::linear(x, b[p.w1], b[p.b1])), b[p.w2], b[p.b2]);
  }

  ModelConfig cfg_;
  ParamStore store_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, seg_emb_ = 0;
  std::vector<EncoderLayer> enc_;
  LnParams enc_final_ln_;
  std::size_t pool_w_ = 0, pool_b_ = 0;
  std::vector<DecoderLayer> dec_;
  std::size_t out_w_ = 0, out_b_ = 0;
};

// ---------------------------------------------------------------------------
// Decoder memory assembly and generation

struct WeightedEncoderOutput {
  const EncoderOutput* output = nullptr;
  double edge_weight = 0.0;
};

/// Concatenates the first `source_budget` unmasked source rows, then for
/// each reference in descending edge weight its first `per_ref_budget`
/// unmasked rows. Short inputs contribute what they have.
inline DecoderContext build_decoder_memory(const EncoderOutput& source,
                                           std::vector<WeightedEncoderOutput> refs,
                                           std::size_t per_ref_budget,
                                           std::size_t source_budget) {
  if (per_ref_budget < 1 || source_budget < 1)
    throw ValidationError("build_decoder_memory: budgets must be >= 1");
  std::stable_sort(refs.begin(), refs.end(), [](const auto& a, const auto& b) {
    return a.edge_weight > b.edge_weight;
  });

  DecoderContext ctx;
  std::vector<Var> parts;
  auto take = [&](const EncoderOutput& enc, std::size_t budget, int slot) {
    std::size_t taken = 0;
    for (Index i = 0; i < enc.token_reps.rows() && taken < budget; ++i) {
      if (!enc.attention_mask[static_cast<std::size_t>(i)]) continue;
      parts.push_back(ad::slice_rows(enc.token_reps, i, 1));
      ctx.provenance.emplace_back(slot, i);
      ++taken;
    }
  };
  take(source, source_budget, 0);
  for (std::size_t r = 0; r < refs.size(); ++r)
    take(*refs[r].output, per_ref_budget, static_cast<int>(r + 1));

  ctx.memory = ad::vstack(parts);
  ctx.memory_mask.assign(static_cast<std::size_t>(ctx.memory.rows()), 1);
  return ctx;
}

enum class DecodeStrategy { greedy, beam };

struct GenerateOptions {
  DecodeStrategy strategy = DecodeStrategy::greedy;
  std::size_t beam_width = 1;
  std::size_t max_length = 64;
};

namespace detail {

/// Logits row for the last position of `prefix` given frozen parameters.
/// Rebuilds a small tape per step; at desk scale this is cheap and keeps
/// generation stateless.
inline Eigen::RowVectorXd next_token_logits(
    const Model& m, const Matrix& memory, const std::vector<char>& memory_mask,
    const std::vector<Index>& prefix) {
  Tape tape;
  Binding b = m.bind(tape);
  DecoderContext ctx;
  ctx.memory = tape.constant(memory);
  ctx.memory_mask = memory_mask;
  Var emb = m.embed_tokens(b, prefix, 0);
  Var logits = m.decoder_step(b, ctx, emb);
  return logits.value().row(logits.rows() - 1);
}

inline Index argmax_lowest_id(const Eigen::RowVectorXd& row) {
  Index best = 0;
  for (Index j = 1; j < row.size(); ++j)
    if (row(j) > row(best)) best = j;
  return best;
}

}  // namespace detail

/// Autoregressive decoding from <bos> until <eos> or max_length. Greedy
/// takes the argmax with lowest-id tie break; beam keeps `beam_width`
/// hypotheses ranked by length-normalized log probability.
inline std::vector<Index> generate(const Model& m, const Matrix& memory,
                                   const std::vector<char>& memory_mask,
                                   const GenerateOptions& opt) {
  if (opt.max_length < 1) throw ValidationError("generate: max_length must be >= 1");
  if (opt.strategy == DecodeStrategy::greedy) {
    std::vector<Index> prefix{Vocabulary::kBos};
    std::vector<Index> out;
    for (std::size_t step = 0; step < opt.max_length; ++step) {
      const auto logits = detail::next_token_logits(m, memory, memory_mask, prefix);
      const Index next = detail::argmax_lowest_id(logits);
      if (next == Vocabulary::kEos) break;
      out.push_back(next);
      prefix.push_back(next);
    }
    return out;
  }

  // Beam search prunes on raw cumulative log probability (so width 1 matches
  // greedy exactly) and ranks finished hypotheses by length-normalized score.
  struct Hypothesis {
    std::vector<Index> tokens;  // without <bos>
    double log_prob = 0.0;
    bool finished = false;
    double normalized() const {
      return log_prob / static_cast<double>(tokens.size() + 1);
    }
  };
  auto prune_order = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  };
  auto final_order = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.normalized() != b.normalized()) return a.normalized() > b.normalized();
    return a.tokens < b.tokens;
  };
  const std::size_t width = std::max<std::size_t>(opt.beam_width, 1);

  std::vector<Hypothesis> beams{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < opt.max_length; ++step) {
    std::vector<Hypothesis> candidates;
    for (const auto& hyp : beams) {
      std::vector<Index> prefix{Vocabulary::kBos};
      prefix.insert(prefix.end(), hyp.tokens.begin(), hyp.tokens.end());
      const auto logits = detail::next_token_logits(m, memory, memory_mask, prefix);
      const double mx = logits.maxCoeff();
      const double lse = mx + std::log((logits.array() - mx).exp().sum());
      for (Index tok = 0; tok < logits.size(); ++tok) {
        Hypothesis next = hyp;
        next.log_prob += logits(tok) - lse;
        if (tok == Vocabulary::kEos) {
          next.finished = true;
        } else {
          next.tokens.push_back(tok);
        }
        candidates.push_back(std::move(next));
      }
    }
    if (candidates.empty()) break;
    std::sort(candidates.begin(), candidates.end(), prune_order);
    if (candidates.size() > width) candidates.resize(width);
    beams.clear();
    for (auto& c : candidates) {
      if (c.finished)
        finished.push_back(c);
      else
        beams.push_back(std::move(c));
    }
    if (beams.empty()) break;
  }
  for (auto& b : beams) finished.push_back(b);  // length cap reached
  if (finished.empty()) return {};
  std::sort(finished.begin(), finished.end(), final_order);
  return finished.front().tokens;
}

}  // namespace citesum::model
