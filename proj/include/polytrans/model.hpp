#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "polytrans/bpe.hpp"
#include "polytrans/error.hpp"
#include "polytrans/params.hpp"
#include "polytrans/rng.hpp"

namespace polytrans {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int max_len = 160;          // positional table length; longest sequence allowed
  double dropout = 0.1;
  double label_smoothing = 0.1;

  int d_head() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size <= Specials::count) throw Error("model: vocab_size too small");
    if (n_heads < 1 || d_model < n_heads || d_model % n_heads != 0)
      throw Error("model: d_model must be a positive multiple of n_heads");
    if (d_model % 2 != 0) throw Error("model: d_model must be even (sinusoidal positions)");
    if (d_ff < 1 || n_enc_layers < 1 || n_dec_layers < 1 || max_len < 2)
      throw Error("model: bad dimensions");
    if (dropout < 0.0 || dropout >= 1.0) throw Error("model: dropout must be in [0,1)");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw Error("model: label_smoothing must be in [0,1)");
  }
};

// One teacher-forced training instance. The encoder side carries a trailing
// eos; the decoder input is bos-shifted and the output is eos-terminated.
struct TrainExample {
  std::vector<int> src;
  std::vector<int> tgt_in;
  std::vector<int> tgt_out;
};

inline TrainExample make_train_example(const std::vector<int>& src_ids,
                                       const std::vector<int>& tgt_ids) {
  TrainExample ex;
  ex.src = src_ids;
  ex.src.push_back(Specials::eos);
  ex.tgt_in.reserve(tgt_ids.size() + 1);
  ex.tgt_in.push_back(Specials::bos);
  ex.tgt_in.insert(ex.tgt_in.end(), tgt_ids.begin(), tgt_ids.end());
  ex.tgt_out = tgt_ids;
  ex.tgt_out.push_back(Specials::eos);
  return ex;
}

struct LossStats {
  double sum = 0.0;  // summed per-token loss
  int count = 0;     // non-pad target positions

  double mean() const { return count ? sum / count : 0.0; }
};

// Minimum achievable per-token loss under label smoothing: the entropy of the
// smoothed target distribution itself (pad carries zero mass).
inline double label_smoothing_floor(double eps, int vocab_size) {
  if (eps <= 0.0) return 0.0;
  const double off = eps / (vocab_size - 1);
  const double on = 1.0 - eps + off;
  double h = -on * std::log(on);
  if (vocab_size > 2) h -= (vocab_size - 2) * off * std::log(off);
  return h;
}

namespace detail {

template <typename S>
inline S sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
constexpr S mask_value() {
  return S(-1e30);
}

template <typename S>
void softmax_rows(Mat<S>& x) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    auto row = x.row(r).array();
    S m = row.maxCoeff();
    row = (row - m).exp();
    row /= row.sum();
  }
}

}  // namespace detail

// --- building blocks with explicit tapes ------------------------------------

template <typename S>
struct LnTape {
  Mat<S> xhat;
  Vec<S> inv_std;
};

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, Eigen::Map<const Vec<S>> gamma, Eigen::Map<const Vec<S>> beta,
                  LnTape<S>* tape) {
  const S eps = S(1e-5);
  const auto n = x.rows();
  const auto d = x.cols();
  Mat<S> y(n, d);
  Mat<S> xhat(n, d);
  Vec<S> inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    S mu = x.row(r).mean();
    S var = (x.row(r).array() - mu).square().sum() / S(d);
    S is = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * is;
    y.row(r) = xhat.row(r).array() * gamma.transpose().array() + beta.transpose().array();
    inv_std(r) = is;
  }
  if (tape) {
    tape->xhat = std::move(xhat);
    tape->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const LnTape<S>& tape,
                           Eigen::Map<const Vec<S>> gamma, VecMap<S> dgamma, VecMap<S> dbeta) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  Mat<S> dx(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    auto xh = tape.xhat.row(r).array();
    auto dyr = dy.row(r).array();
    dgamma += (dyr * xh).matrix().transpose();
    dbeta += dy.row(r).transpose();
    Eigen::Array<S, 1, Eigen::Dynamic> dxhat = dyr * gamma.transpose().array();
    S m1 = dxhat.mean();
    S m2 = (dxhat * xh).mean();
    dx.row(r) = (tape.inv_std(r) * (dxhat - m1 - xh * m2)).matrix();
  }
  return dx;
}

// Read-only / gradient views over one attention block's parameters.
template <typename S>
struct AttnParams {
  ConstMatMap<S> wq, wk, wv, wo;
  Eigen::Map<const Vec<S>> bq, bk, bv, bo;
  AttnParams(const ParamStore<S>& s, const std::string& p)
      : wq(s.mat(p + ".wq")), wk(s.mat(p + ".wk")), wv(s.mat(p + ".wv")), wo(s.mat(p + ".wo")),
        bq(s.vec(p + ".bq")), bk(s.vec(p + ".bk")), bv(s.vec(p + ".bv")), bo(s.vec(p + ".bo")) {}
};

template <typename S>
struct AttnGrads {
  MatMap<S> wq, wk, wv, wo;
  VecMap<S> bq, bk, bv, bo;
  AttnGrads(ParamStore<S>& s, const std::string& p)
      : wq(s.mat(p + ".wq")), wk(s.mat(p + ".wk")), wv(s.mat(p + ".wv")), wo(s.mat(p + ".wo")),
        bq(s.vec(p + ".bq")), bk(s.vec(p + ".bk")), bv(s.vec(p + ".bv")), bo(s.vec(p + ".bo")) {}
};

template <typename S>
struct FfnParams {
  ConstMatMap<S> w1, w2;
  Eigen::Map<const Vec<S>> b1, b2;
  FfnParams(const ParamStore<S>& s, const std::string& p)
      : w1(s.mat(p + ".w1")), w2(s.mat(p + ".w2")), b1(s.vec(p + ".b1")), b2(s.vec(p + ".b2")) {}
};

template <typename S>
struct FfnGrads {
  MatMap<S> w1, w2;
  VecMap<S> b1, b2;
  FfnGrads(ParamStore<S>& s, const std::string& p)
      : w1(s.mat(p + ".w1")), w2(s.mat(p + ".w2")), b1(s.vec(p + ".b1")), b2(s.vec(p + ".b2")) {}
};

template <typename S>
struct AttnTape {
  Mat<S> xq, xkv;
  Mat<S> Q, K, V;
  std::vector<Mat<S>> P;  // per-head attention probabilities [n, m]
  Mat<S> O;               // concatenated head outputs [n, d]
};

template <typename S>
Mat<S> attention_forward(const Mat<S>& xq, const Mat<S>& xkv, const AttnParams<S>& w,
                         int n_heads, bool causal, AttnTape<S>& tape) {
  const auto d = xq.cols();
  const int dh = static_cast<int>(d) / n_heads;
  const S scale = S(1) / std::sqrt(S(dh));
  const auto n = xq.rows();
  const auto m = xkv.rows();

  tape.xq = xq;
  tape.xkv = xkv;
  tape.Q = (xq * w.wq).rowwise() + w.bq.transpose();
  tape.K = (xkv * w.wk).rowwise() + w.bk.transpose();
  tape.V = (xkv * w.wv).rowwise() + w.bv.transpose();
  tape.O.resize(n, d);
  tape.P.assign(static_cast<std::size_t>(n_heads), Mat<S>());

  for (int h = 0; h < n_heads; ++h) {
    auto Qh = tape.Q.middleCols(h * dh, dh);
    auto Kh = tape.K.middleCols(h * dh, dh);
    auto Vh = tape.V.middleCols(h * dh, dh);
    Mat<S> sc = Qh * Kh.transpose() * scale;
    if (causal) {
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j) sc(i, j) = detail::mask_value<S>();
    }
    detail::softmax_rows(sc);
    tape.O.middleCols(h * dh, dh) = sc * Vh;
    tape.P[static_cast<std::size_t>(h)] = std::move(sc);
  }
  return (tape.O * w.wo).rowwise() + w.bo.transpose();
}

// dxq/dxkv are accumulated into; passing the same matrix for both (self
// attention) is supported.
template <typename S>
void attention_backward(const Mat<S>& dout, const AttnTape<S>& tape, const AttnParams<S>& w,
                        AttnGrads<S>& g, int n_heads, Mat<S>& dxq, Mat<S>& dxkv) {
  const auto d = dout.cols();
  const int dh = static_cast<int>(d) / n_heads;
  const S scale = S(1) / std::sqrt(S(dh));
  const auto n = tape.xq.rows();
  const auto m = tape.xkv.rows();

  g.wo += tape.O.transpose() * dout;
  g.bo += dout.colwise().sum().transpose();
  Mat<S> dO = dout * w.wo.transpose();

  Mat<S> dQ(n, d), dK(m, d), dV(m, d);
  for (int h = 0; h < n_heads; ++h) {
    auto dOh = dO.middleCols(h * dh, dh);
    auto Qh = tape.Q.middleCols(h * dh, dh);
    auto Kh = tape.K.middleCols(h * dh, dh);
    auto Vh = tape.V.middleCols(h * dh, dh);
    const Mat<S>& P = tape.P[static_cast<std::size_t>(h)];

    Mat<S> dP = dOh * Vh.transpose();  // [n, m]
    dV.middleCols(h * dh, dh) = P.transpose() * dOh;

    Mat<S> dS(n, m);
    for (Eigen::Index r = 0; r < n; ++r) {
      S dot = (dP.row(r).array() * P.row(r).array()).sum();
      dS.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix();
    }
    dQ.middleCols(h * dh, dh) = dS * Kh * scale;
    dK.middleCols(h * dh, dh) = dS.transpose() * Qh * scale;
  }

  g.wq += tape.xq.transpose() * dQ;
  g.bq += dQ.colwise().sum().transpose();
  g.wk += tape.xkv.transpose() * dK;
  g.bk += dK.colwise().sum().transpose();
  g.wv += tape.xkv.transpose() * dV;
  g.bv += dV.colwise().sum().transpose();

  dxq += dQ * w.wq.transpose();
  dxkv += dK * w.wk.transpose() + dV * w.wv.transpose();
}

template <typename S>
struct FfnTape {
  Mat<S> x, U, A;
};

// Position-wise feed-forward with swish (x * sigmoid(x)) activation.
template <typename S>
Mat<S> ffn_forward(const Mat<S>& x, const FfnParams<S>& w, FfnTape<S>& tape) {
  tape.x = x;
  tape.U = (x * w.w1).rowwise() + w.b1.transpose();
  tape.A = tape.U.unaryExpr([](S u) { return u * detail::sigmoid(u); });
  return (tape.A * w.w2).rowwise() + w.b2.transpose();
}

template <typename S>
void ffn_backward(const Mat<S>& dout, const FfnTape<S>& tape, const FfnParams<S>& w,
                  FfnGrads<S>& g, Mat<S>& dx) {
  g.w2 += tape.A.transpose() * dout;
  g.b2 += dout.colwise().sum().transpose();
  Mat<S> dA = dout * w.w2.transpose();
  Mat<S> dU = dA.cwiseProduct(tape.U.unaryExpr([](S u) {
    S s = detail::sigmoid(u);
    return s * (S(1) + u * (S(1) - s));
  }));
  g.w1 += tape.x.transpose() * dU;
  g.b1 += dU.colwise().sum().transpose();
  dx += dU * w.w1.transpose();
}

// Inverted dropout; identity when rng is null or rate is zero.
template <typename S>
struct DropTape {
  Mat<S> mask;
  bool active = false;
};

template <typename S>
void dropout_forward(Mat<S>& x, double rate, Rng* rng, DropTape<S>& tape) {
  if (!rng || rate <= 0.0) {
    tape.active = false;
    return;
  }
  tape.active = true;
  tape.mask.resize(x.rows(), x.cols());
  const S keep_scale = S(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      tape.mask(i, j) = rng->next_double() < rate ? S(0) : keep_scale;
  x.array() *= tape.mask.array();
}

template <typename S>
void dropout_backward(Mat<S>& dx, const DropTape<S>& tape) {
  if (tape.active) dx.array() *= tape.mask.array();
}

// --- whole-model tapes -------------------------------------------------------

template <typename S>
struct EncLayerTape {
  Mat<S> x_in;
  LnTape<S> ln1;
  AttnTape<S> att;
  DropTape<S> drop1;
  Mat<S> x_mid;
  LnTape<S> ln2;
  FfnTape<S> ffn;
  DropTape<S> drop2;
};

template <typename S>
struct EncTape {
  std::vector<int> ids;
  DropTape<S> demb;
  std::vector<EncLayerTape<S>> layers;
  LnTape<S> lnf;
  Mat<S> out;
};

template <typename S>
struct DecLayerTape {
  Mat<S> x_in;
  LnTape<S> ln1;
  AttnTape<S> self_att;
  DropTape<S> drop1;
  Mat<S> x_mid1;
  LnTape<S> ln2;
  AttnTape<S> cross;
  DropTape<S> drop2;
  Mat<S> x_mid2;
  LnTape<S> ln3;
  FfnTape<S> ffn;
  DropTape<S> drop3;
};

template <typename S>
struct DecTape {
  std::vector<int> ids;
  DropTape<S> demb;
  std::vector<DecLayerTape<S>> layers;
  LnTape<S> lnf;
  Mat<S> out;
  Mat<S> logits;
};

template <typename S>
class Transformer;

// Incremental decoding cache: encoder output, per-layer cross K/V (computed
// once), and per-layer self K/V appended one row per emitted token. Copyable,
// so search hypotheses can fork it.
template <typename S>
struct DecodeState {
  const Transformer<S>* model = nullptr;
  Mat<S> enc_out;
  std::vector<Mat<S>> self_k, self_v;
  std::vector<Mat<S>> cross_k, cross_v;
  int pos = 0;

  Vec<S> step(int token);  // feeds one token, returns log-probabilities [V]
};

// Pre-LN encoder/decoder transformer with tied input/output embeddings and a
// hand-written backward pass over explicit activation tapes.
template <typename S>
class Transformer {
 public:
  explicit Transformer(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    auto layout = std::make_shared<ParamLayout>();
    const int d = cfg_.d_model;
    const int dff = cfg_.d_ff;
    auto add_ln = [&](const std::string& p) {
      layout->add(p + ".g", 1, d);
      layout->add(p + ".b", 1, d);
    };
    auto add_attn = [&](const std::string& p) {
      for (const char* w : {".wq", ".wk", ".wv", ".wo"}) layout->add(p + w, d, d);
      for (const char* b : {".bq", ".bk", ".bv", ".bo"}) layout->add(p + b, 1, d);
    };
    auto add_ffn = [&](const std::string& p) {
      layout->add(p + ".w1", d, dff);
      layout->add(p + ".b1", 1, dff);
      layout->add(p + ".w2", dff, d);
      layout->add(p + ".b2", 1, d);
    };

    layout->add("emb", cfg_.vocab_size, d);
    for (int l = 0; l < cfg_.n_enc_layers; ++l) {
      std::string p = "enc" + std::to_string(l);
      add_ln(p + ".ln1");
      add_attn(p + ".att");
      add_ln(p + ".ln2");
      add_ffn(p + ".ffn");
    }
    add_ln("enc.lnf");
    for (int l = 0; l < cfg_.n_dec_layers; ++l) {
      std::string p = "dec" + std::to_string(l);
      add_ln(p + ".ln1");
      add_attn(p + ".self");
      add_ln(p + ".ln2");
      add_attn(p + ".cross");
      add_ln(p + ".ln3");
      add_ffn(p + ".ffn");
    }
    add_ln("dec.lnf");

    layout_ = std::move(layout);
    params_ = ParamStore<S>(layout_);
    build_position_table();
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  ParamStore<S> zero_like() const { return ParamStore<S>(layout_); }
  std::shared_ptr<const ParamLayout> layout() const { return layout_; }

  // Embeddings ~ N(0, d^-1/2), linear weights Xavier-uniform, biases zero,
  // layer-norm scales one. Each tensor draws from its own derived stream, so
  // adding layers does not shift the values of earlier tensors.
  void init_params(std::uint64_t seed) {
    const auto& segs = layout_->segments();
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const auto& seg = segs[i];
      Rng rng(mix_seed(seed, 0xA110C000ULL + i));
      S* ptr = params_.flat().data() + seg.offset;
      std::size_t count = static_cast<std::size_t>(seg.rows) * static_cast<std::size_t>(seg.cols);
      if (seg.name == "emb") {
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
        for (std::size_t k = 0; k < count; ++k)
          ptr[k] = static_cast<S>(rng.next_gaussian() * std_dev);
      } else if (ends_with(seg.name, ".g")) {
        std::fill(ptr, ptr + count, S(1));
      } else if (seg.rows == 1) {  // biases and layer-norm shifts
        std::fill(ptr, ptr + count, S(0));
      } else {
        const double limit = std::sqrt(6.0 / (seg.rows + seg.cols));
        for (std::size_t k = 0; k < count; ++k)
          ptr[k] = static_cast<S>(rng.uniform(-limit, limit));
      }
    }
  }

  Mat<S> embed(const std::vector<int>& ids) const {
    if (ids.empty()) throw Error("model: empty token sequence");
    if (static_cast<int>(ids.size()) > cfg_.max_len)
      throw Error("model: sequence length " + std::to_string(ids.size()) +
                  " exceeds max_len " + std::to_string(cfg_.max_len));
    auto emb = params_.mat("emb");
    Mat<S> x(static_cast<Eigen::Index>(ids.size()), cfg_.d_model);
    const S scale = std::sqrt(S(cfg_.d_model));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= cfg_.vocab_size)
        throw Error("model: token id out of range");
      x.row(static_cast<Eigen::Index>(i)) =
          emb.row(ids[i]) * scale + pe_.row(static_cast<Eigen::Index>(i));
    }
    return x;
  }

  EncTape<S> encode(const std::vector<int>& src, Rng* drop) const {
    EncTape<S> t;
    t.ids = src;
    Mat<S> x = embed(src);
    dropout_forward(x, cfg_.dropout, drop, t.demb);
    t.layers.resize(static_cast<std::size_t>(cfg_.n_enc_layers));
    for (int l = 0; l < cfg_.n_enc_layers; ++l) {
      auto& lt = t.layers[static_cast<std::size_t>(l)];
      std::string p = "enc" + std::to_string(l);
      lt.x_in = x;
      Mat<S> h = layer_norm(x, params_.vec(p + ".ln1.g"), params_.vec(p + ".ln1.b"), &lt.ln1);
      AttnParams<S> aw(params_, p + ".att");
      Mat<S> a = attention_forward(h, h, aw, cfg_.n_heads, false, lt.att);
      dropout_forward(a, cfg_.dropout, drop, lt.drop1);
      x += a;
      lt.x_mid = x;
      h = layer_norm(x, params_.vec(p + ".ln2.g"), params_.vec(p + ".ln2.b"), &lt.ln2);
      FfnParams<S> fw(params_, p + ".ffn");
      Mat<S> f = ffn_forward(h, fw, lt.ffn);
      dropout_forward(f, cfg_.dropout, drop, lt.drop2);
      x += f;
    }
    t.out = layer_norm(x, params_.vec("enc.lnf.g"), params_.vec("enc.lnf.b"), &t.lnf);
    return t;
  }

  DecTape<S> decode(const std::vector<int>& tgt_in, const Mat<S>& enc_out, Rng* drop) const {
    DecTape<S> t;
    t.ids = tgt_in;
    Mat<S> x = embed(tgt_in);
    dropout_forward(x, cfg_.dropout, drop, t.demb);
    t.layers.resize(static_cast<std::size_t>(cfg_.n_dec_layers));
    for (int l = 0; l < cfg_.n_dec_layers; ++l) {
      auto& lt = t.layers[static_cast<std::size_t>(l)];
      std::string p = "dec" + std::to_string(l);
      lt.x_in = x;
      Mat<S> h = layer_norm(x, params_.vec(p + ".ln1.g"), params_.vec(p + ".ln1.b"), &lt.ln1);
      AttnParams<S> sw(params_, p + ".self");
      Mat<S> a = attention_forward(h, h, sw, cfg_.n_heads, true, lt.self_att);
      dropout_forward(a, cfg_.dropout, drop, lt.drop1);
      x += a;
      lt.x_mid1 = x;
      h = layer_norm(x, params_.vec(p + ".ln2.g"), params_.vec(p + ".ln2.b"), &lt.ln2);
      AttnParams<S> cw(params_, p + ".cross");
      Mat<S> c = attention_forward(h, enc_out, cw, cfg_.n_heads, false, lt.cross);
      dropout_forward(c, cfg_.dropout, drop, lt.drop2);
      x += c;
      lt.x_mid2 = x;
      h = layer_norm(x, params_.vec(p + ".ln3.g"), params_.vec(p + ".ln3.b"), &lt.ln3);
      FfnParams<S> fw(params_, p + ".ffn");
      Mat<S> f = ffn_forward(h, fw, lt.ffn);
      dropout_forward(f, cfg_.dropout, drop, lt.drop3);
      x += f;
    }
    t.out = layer_norm(x, params_.vec("dec.lnf.g"), params_.vec("dec.lnf.b"), &t.lnf);
    t.logits = t.out * params_.mat("emb").transpose();
    return t;
  }

  // Backward for the decoder stack and output projection; returns the
  // gradient with respect to enc_out.
  Mat<S> decoder_backward(const DecTape<S>& t, const Mat<S>& dlogits, ParamStore<S>& grads,
                          Eigen::Index enc_rows) const {
    auto emb = params_.mat("emb");
    auto gemb = grads.mat("emb");
    gemb += dlogits.transpose() * t.out;
    Mat<S> dy = dlogits * emb;

    Mat<S> dx = layer_norm_backward(dy, t.lnf, params_.vec("dec.lnf.g"),
                                    grads.vec("dec.lnf.g"), grads.vec("dec.lnf.b"));
    Mat<S> denc = Mat<S>::Zero(enc_rows, cfg_.d_model);

    for (int l = cfg_.n_dec_layers - 1; l >= 0; --l) {
      const auto& lt = t.layers[static_cast<std::size_t>(l)];
      std::string p = "dec" + std::to_string(l);

      Mat<S> db = dx;
      dropout_backward(db, lt.drop3);
      Mat<S> dh = Mat<S>::Zero(dx.rows(), dx.cols());
      FfnParams<S> fw(params_, p + ".ffn");
      FfnGrads<S> fg(grads, p + ".ffn");
      ffn_backward(db, lt.ffn, fw, fg, dh);
      dx += layer_norm_backward(dh, lt.ln3, params_.vec(p + ".ln3.g"),
                                grads.vec(p + ".ln3.g"), grads.vec(p + ".ln3.b"));

      db = dx;
      dropout_backward(db, lt.drop2);
      dh.setZero();
      AttnParams<S> cw(params_, p + ".cross");
      AttnGrads<S> cg(grads, p + ".cross");
      attention_backward(db, lt.cross, cw, cg, cfg_.n_heads, dh, denc);
      dx += layer_norm_backward(dh, lt.ln2, params_.vec(p + ".ln2.g"),
                                grads.vec(p + ".ln2.g"), grads.vec(p + ".ln2.b"));

      db = dx;
      dropout_backward(db, lt.drop1);
      dh.setZero();
      AttnParams<S> sw(params_, p + ".self");
      AttnGrads<S> sg(grads, p + ".self");
      attention_backward(db, lt.self_att, sw, sg, cfg_.n_heads, dh, dh);
      dx += layer_norm_backward(dh, lt.ln1, params_.vec(p + ".ln1.g"),
                                grads.vec(p + ".ln1.g"), grads.vec(p + ".ln1.b"));
    }

    dropout_backward(dx, t.demb);
    const S scale = std::sqrt(S(cfg_.d_model));
    for (std::size_t i = 0; i < t.ids.size(); ++i)
      gemb.row(t.ids[i]) += dx.row(static_cast<Eigen::Index>(i)) * scale;
    return denc;
  }

  void encoder_backward(const EncTape<S>& t, const Mat<S>& denc_out,
                        ParamStore<S>& grads) const {
    Mat<S> dx = layer_norm_backward(denc_out, t.lnf, params_.vec("enc.lnf.g"),
                                    grads.vec("enc.lnf.g"), grads.vec("enc.lnf.b"));
    for (int l = cfg_.n_enc_layers - 1; l >= 0; --l) {
      const auto& lt = t.layers[static_cast<std::size_t>(l)];
      std::string p = "enc" + std::to_string(l);

      Mat<S> db = dx;
      dropout_backward(db, lt.drop2);
      Mat<S> dh = Mat<S>::Zero(dx.rows(), dx.cols());
      FfnParams<S> fw(params_, p + ".ffn");
      FfnGrads<S> fg(grads, p + ".ffn");
      ffn_backward(db, lt.ffn, fw, fg, dh);
      dx += layer_norm_backward(dh, lt.ln2, params_.vec(p + ".ln2.g"),
                                grads.vec(p + ".ln2.g"), grads.vec(p + ".ln2.b"));

      db = dx;
      dropout_backward(db, lt.drop1);
      dh.setZero();
      AttnParams<S> aw(params_, p + ".att");
      AttnGrads<S> ag(grads, p + ".att");
      attention_backward(db, lt.att, aw, ag, cfg_.n_heads, dh, dh);
      dx += layer_norm_backward(dh, lt.ln1, params_.vec(p + ".ln1.g"),
                                grads.vec(p + ".ln1.g"), grads.vec(p + ".ln1.b"));
    }

    dropout_backward(dx, t.demb);
    auto gemb = grads.mat("emb");
    const S scale = std::sqrt(S(cfg_.d_model));
    for (std::size_t i = 0; i < t.ids.size(); ++i)
      gemb.row(t.ids[i]) += dx.row(static_cast<Eigen::Index>(i)) * scale;
  }

  // Label-smoothed cross entropy summed over non-pad target positions.
  // When dlogits is given it receives the gradient of that sum.
  LossStats smoothed_loss(const Mat<S>& logits, const std::vector<int>& tgt_out,
                          Mat<S>* dlogits) const {
    if (static_cast<std::size_t>(logits.rows()) != tgt_out.size())
      throw Error("model: logits/targets length mismatch");
    const int V = cfg_.vocab_size;
    const double eps = cfg_.label_smoothing;
    const double off = eps > 0.0 ? eps / (V - 1) : 0.0;
    LossStats ls;
    if (dlogits) dlogits->setZero(logits.rows(), logits.cols());

    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const int t = tgt_out[static_cast<std::size_t>(r)];
      if (t == Specials::pad) continue;
      if (t < 0 || t >= V) throw Error("model: target id out of range");

      auto row = logits.row(r).array();
      const S m = row.maxCoeff();
      double sum = 0.0;
      for (Eigen::Index v = 0; v < V; ++v) sum += std::exp(static_cast<double>(row(v) - m));
      const double logsum = std::log(sum);

      double sum_logp_nonpad = 0.0;
      for (Eigen::Index v = 0; v < V; ++v) {
        if (v == Specials::pad) continue;
        sum_logp_nonpad += static_cast<double>(row(v) - m) - logsum;
      }
      const double logp_t = static_cast<double>(row(t) - m) - logsum;
      ls.sum += -(1.0 - eps) * logp_t - off * sum_logp_nonpad;
      ls.count += 1;

      if (dlogits) {
        for (Eigen::Index v = 0; v < V; ++v) {
          const double p = std::exp(static_cast<double>(row(v) - m) - logsum);
          double q = 0.0;
          if (v != Specials::pad) q = (v == t) ? 1.0 - eps + off : off;
          (*dlogits)(r, v) = static_cast<S>(p - q);
        }
      }
    }
    return ls;
  }

  // Forward + backward on one example; gradient of the per-token loss SUM is
  // accumulated into grads. Caller handles scaling.
  LossStats loss_and_grad(const TrainExample& ex, ParamStore<S>& grads, Rng* drop) const {
    EncTape<S> et = encode(ex.src, drop);
    DecTape<S> dt = decode(ex.tgt_in, et.out, drop);
    Mat<S> dlogits;
    LossStats ls = smoothed_loss(dt.logits, ex.tgt_out, &dlogits);
    Mat<S> denc = decoder_backward(dt, dlogits, grads, et.out.rows());
    encoder_backward(et, denc, grads);
    return ls;
  }

  LossStats loss_only(const TrainExample& ex) const {
    EncTape<S> et = encode(ex.src, nullptr);
    DecTape<S> dt = decode(ex.tgt_in, et.out, nullptr);
    return smoothed_loss(dt.logits, ex.tgt_out, nullptr);
  }

  // Teacher-forced per-token log probabilities of tgt given src (eos-terminated).
  std::vector<double> score_sequence(const std::vector<int>& src_ids,
                                     const std::vector<int>& tgt_ids) const {
    TrainExample ex = make_train_example(src_ids, tgt_ids);
    EncTape<S> et = encode(ex.src, nullptr);
    DecTape<S> dt = decode(ex.tgt_in, et.out, nullptr);
    std::vector<double> out;
    out.reserve(ex.tgt_out.size());
    for (Eigen::Index r = 0; r < dt.logits.rows(); ++r) {
      auto row = dt.logits.row(r).array();
      const S m = row.maxCoeff();
      double sum = 0.0;
      for (Eigen::Index v = 0; v < cfg_.vocab_size; ++v)
        sum += std::exp(static_cast<double>(row(v) - m));
      const int t = ex.tgt_out[static_cast<std::size_t>(r)];
      double lp = static_cast<double>(row(t) - m) - std::log(sum);
      out.push_back(std::min(lp, 0.0));
    }
    return out;
  }

  DecodeState<S> begin_decode(const std::vector<int>& src_ids) const {
    std::vector<int> src = src_ids;
    src.push_back(Specials::eos);
    EncTape<S> et = encode(src, nullptr);
    DecodeState<S> st;
    st.model = this;
    st.enc_out = std::move(et.out);
    const auto nl = static_cast<std::size_t>(cfg_.n_dec_layers);
    st.self_k.assign(nl, Mat<S>(cfg_.max_len, cfg_.d_model));
    st.self_v.assign(nl, Mat<S>(cfg_.max_len, cfg_.d_model));
    st.cross_k.resize(nl);
    st.cross_v.resize(nl);
    for (int l = 0; l < cfg_.n_dec_layers; ++l) {
      AttnParams<S> cw(params_, "dec" + std::to_string(l) + ".cross");
      st.cross_k[static_cast<std::size_t>(l)] =
          (st.enc_out * cw.wk).rowwise() + cw.bk.transpose();
      st.cross_v[static_cast<std::size_t>(l)] =
          (st.enc_out * cw.wv).rowwise() + cw.bv.transpose();
    }
    return st;
  }

  const Mat<S>& position_table() const { return pe_; }

 private:
  static bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  }

  void build_position_table() {
    pe_.resize(cfg_.max_len, cfg_.d_model);
    for (int pos = 0; pos < cfg_.max_len; ++pos) {
      for (int i = 0; i < cfg_.d_model / 2; ++i) {
        const double div = std::pow(10000.0, 2.0 * i / cfg_.d_model);
        pe_(pos, 2 * i) = static_cast<S>(std::sin(pos / div));
        pe_(pos, 2 * i + 1) = static_cast<S>(std::cos(pos / div));
      }
    }
  }

  friend struct DecodeState<S>;

  ModelConfig cfg_;
  std::shared_ptr<const ParamLayout> layout_;
  ParamStore<S> params_;
  Mat<S> pe_;
};

template <typename S>
Vec<S> DecodeState<S>::step(int token) {
  if (!model) throw Error("decode state: not initialized");
  const ModelConfig& cfg = model->config();
  if (pos >= cfg.max_len) throw Error("decode state: exceeded max_len");
  if (token < 0 || token >= cfg.vocab_size) throw Error("decode state: token id out of range");

  const ParamStore<S>& P = model->params();
  const int d = cfg.d_model;
  const int dh = cfg.d_head();
  const S scale = S(1) / std::sqrt(S(dh));

  Mat<S> x = P.mat("emb").row(token) * std::sqrt(S(d));
  x += model->pe_.row(pos);

  for (int l = 0; l < cfg.n_dec_layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    std::string p = "dec" + std::to_string(l);

    Mat<S> h = layer_norm<S>(x, P.vec(p + ".ln1.g"), P.vec(p + ".ln1.b"), nullptr);
    AttnParams<S> sw(P, p + ".self");
    Mat<S> q = (h * sw.wq).rowwise() + sw.bq.transpose();
    self_k[li].row(pos) = (h * sw.wk).rowwise() + sw.bk.transpose();
    self_v[li].row(pos) = (h * sw.wv).rowwise() + sw.bv.transpose();
    const auto t = pos + 1;
    Mat<S> o(1, d);
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      auto Kh = self_k[li].topRows(t).middleCols(hd * dh, dh);
      auto Vh = self_v[li].topRows(t).middleCols(hd * dh, dh);
      Mat<S> sc = q.middleCols(hd * dh, dh) * Kh.transpose() * scale;
      detail::softmax_rows(sc);
      o.middleCols(hd * dh, dh) = sc * Vh;
    }
    x += (o * sw.wo).rowwise() + sw.bo.transpose();

    h = layer_norm<S>(x, P.vec(p + ".ln2.g"), P.vec(p + ".ln2.b"), nullptr);
    AttnParams<S> cw(P, p + ".cross");
    q = (h * cw.wq).rowwise() + cw.bq.transpose();
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      auto Kh = cross_k[li].middleCols(hd * dh, dh);
      auto Vh = cross_v[li].middleCols(hd * dh, dh);
      Mat<S> sc = q.middleCols(hd * dh, dh) * Kh.transpose() * scale;
      detail::softmax_rows(sc);
      o.middleCols(hd * dh, dh) = sc * Vh;
    }
    x += (o * cw.wo).rowwise() + cw.bo.transpose();

    h = layer_norm<S>(x, P.vec(p + ".ln3.g"), P.vec(p + ".ln3.b"), nullptr);
    FfnParams<S> fw(P, p + ".ffn");
    FfnTape<S> ft;
    x += ffn_forward(h, fw, ft);
  }

  Mat<S> y = layer_norm<S>(x, P.vec("dec.lnf.g"), P.vec("dec.lnf.b"), nullptr);
  Mat<S> logits = y * P.mat("emb").transpose();

  // log-softmax, clamped so no entry exceeds 0 even after rounding
  auto row = logits.row(0).array();
  const S m = row.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index v = 0; v < logits.cols(); ++v)
    sum += std::exp(static_cast<double>(row(v) - m));
  const S logsum = static_cast<S>(std::log(sum));
  Vec<S> logp(logits.cols());
  for (Eigen::Index v = 0; v < logits.cols(); ++v)
    logp(v) = std::min((row(v) - m) - logsum, S(0));

  ++pos;
  return logp;
}

// Mean-per-token loss over a batch; grads receives the matching gradient.
template <typename S>
double batch_loss_and_grad(const Transformer<S>& model, const std::vector<TrainExample>& batch,
                           ParamStore<S>& grads, Rng* drop) {
  grads.zero();
  LossStats total;
  for (const auto& ex : batch) {
    LossStats ls = model.loss_and_grad(ex, grads, drop);
    total.sum += ls.sum;
    total.count += ls.count;
  }
  if (total.count == 0) throw Error("model: batch has no target tokens");
  const S inv = S(1.0 / total.count);
  for (auto& g : grads.flat()) g *= inv;
  return total.sum / total.count;
}

template <typename S>
double batch_loss(const Transformer<S>& model, const std::vector<TrainExample>& batch) {
  LossStats total;
  for (const auto& ex : batch) {
    LossStats ls = model.loss_only(ex);
    total.sum += ls.sum;
    total.count += ls.count;
  }
  if (total.count == 0) throw Error("model: batch has no target tokens");
  return total.sum / total.count;
}

}  // namespace polytrans
