#include "irtune/model.hpp"

#include "irtune/error.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace irtune {

void ModelConfig::validate() const {
  if (layers < 1 || dim < 1 || heads < 1 || ff_dim < 1 || vocab < 1 || max_len < 1 || classes < 2) {
    throw ConfigError("model dimensions must be >= 1 (classes >= 2)");
  }
  if (dim % heads != 0) {
    throw ConfigError("model.dim = " + std::to_string(dim) + " is not divisible by model.heads = " +
                      std::to_string(heads));
  }
}

// ---------------------------------------------------------------------------
// Parameters

template <typename Scalar>
Index LayerParams<Scalar>::parameter_count() const {
  Index n = ln1_gain.size() + ln1_bias.size() + ln2_gain.size() + ln2_bias.size();
  for (int t = 0; t < kLoraTargetCount; ++t) n += weight[t].size() + bias[t].size();
  return n;
}

template <typename Scalar>
Vector<Scalar> LayerParams<Scalar>::flatten() const {
  Vector<Scalar> out(parameter_count());
  Index at = 0;
  auto put = [&](const auto& m) {
    out.segment(at, m.size()) = m.reshaped();
    at += m.size();
  };
  put(ln1_gain);
  put(ln1_bias);
  for (const auto& w : weight) put(w);
  for (const auto& b : bias) put(b);
  put(ln2_gain);
  put(ln2_bias);
  return out;
}

namespace {

Index target_rows(const ModelConfig& c, LoraTarget t) { return t == LoraTarget::FfnUp ? c.ff_dim : c.dim; }
Index target_cols(const ModelConfig& c, LoraTarget t) { return t == LoraTarget::FfnDown ? c.ff_dim : c.dim; }

template <typename Scalar>
Matrix<Scalar> gaussian(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  return Matrix<Scalar>::NullaryExpr(rows, cols, [&]() { return static_cast<Scalar>(dist(rng)); });
}

}  // namespace

template <typename Scalar>
Parameters<Scalar> Parameters<Scalar>::init(const ModelConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  Parameters p;
  p.token_embedding = gaussian<Scalar>(c.dim, c.vocab, 1.0, rng);
  p.position_embedding = gaussian<Scalar>(c.dim, c.max_len, 0.1, rng);
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(c.layers));
  p.layers.resize(static_cast<std::size_t>(c.layers));
  for (auto& layer : p.layers) {
    layer.ln1_gain = Vector<Scalar>::Ones(c.dim);
    layer.ln1_bias = Vector<Scalar>::Zero(c.dim);
    layer.ln2_gain = Vector<Scalar>::Ones(c.dim);
    layer.ln2_bias = Vector<Scalar>::Zero(c.dim);
    for (LoraTarget t : kAllLoraTargets) {
      const Index rows = target_rows(c, t);
      const Index cols = target_cols(c, t);
      double stddev = 1.0 / std::sqrt(static_cast<double>(cols));
      if (t == LoraTarget::Output || t == LoraTarget::FfnDown) stddev *= residual_scale;
      layer.w(t) = gaussian<Scalar>(rows, cols, stddev, rng);
      layer.b(t) = Vector<Scalar>::Zero(rows);
    }
  }
  p.final_gain = Vector<Scalar>::Ones(c.dim);
  p.final_bias = Vector<Scalar>::Zero(c.dim);
  p.head_weight = gaussian<Scalar>(c.classes, c.dim, 1.0 / std::sqrt(static_cast<double>(c.dim)), rng);
  p.head_bias = Vector<Scalar>::Zero(c.classes);
  return p;
}

template <typename Scalar>
Parameters<Scalar> Parameters<Scalar>::zeros_like(const Parameters& o) {
  Parameters p;
  p.token_embedding = Matrix<Scalar>::Zero(o.token_embedding.rows(), o.token_embedding.cols());
  p.position_embedding = Matrix<Scalar>::Zero(o.position_embedding.rows(), o.position_embedding.cols());
  p.layers.resize(o.layers.size());
  for (std::size_t i = 0; i < o.layers.size(); ++i) {
    const auto& src = o.layers[i];
    auto& dst = p.layers[i];
    dst.ln1_gain = Vector<Scalar>::Zero(src.ln1_gain.size());
    dst.ln1_bias = Vector<Scalar>::Zero(src.ln1_bias.size());
    dst.ln2_gain = Vector<Scalar>::Zero(src.ln2_gain.size());
    dst.ln2_bias = Vector<Scalar>::Zero(src.ln2_bias.size());
    for (int t = 0; t < kLoraTargetCount; ++t) {
      dst.weight[t] = Matrix<Scalar>::Zero(src.weight[t].rows(), src.weight[t].cols());
      dst.bias[t] = Vector<Scalar>::Zero(src.bias[t].size());
    }
  }
  p.final_gain = Vector<Scalar>::Zero(o.final_gain.size());
  p.final_bias = Vector<Scalar>::Zero(o.final_bias.size());
  p.head_weight = Matrix<Scalar>::Zero(o.head_weight.rows(), o.head_weight.cols());
  p.head_bias = Vector<Scalar>::Zero(o.head_bias.size());
  return p;
}

template <typename Scalar>
void Parameters<Scalar>::visit(const std::function<void(const std::string&, Scalar*, Index)>& fn) {
  fn("token_embedding", token_embedding.data(), token_embedding.size());
  fn("position_embedding", position_embedding.data(), position_embedding.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    fn(prefix + "ln1_gain", l.ln1_gain.data(), l.ln1_gain.size());
    fn(prefix + "ln1_bias", l.ln1_bias.data(), l.ln1_bias.size());
    for (LoraTarget t : kAllLoraTargets) fn(prefix + to_string(t) + ".weight", l.w(t).data(), l.w(t).size());
    for (LoraTarget t : kAllLoraTargets) fn(prefix + to_string(t) + ".bias", l.b(t).data(), l.b(t).size());
    fn(prefix + "ln2_gain", l.ln2_gain.data(), l.ln2_gain.size());
    fn(prefix + "ln2_bias", l.ln2_bias.data(), l.ln2_bias.size());
  }
  fn("final_gain", final_gain.data(), final_gain.size());
  fn("final_bias", final_bias.data(), final_bias.size());
  fn("head_weight", head_weight.data(), head_weight.size());
  fn("head_bias", head_bias.data(), head_bias.size());
}

template <typename Scalar>
Index Parameters<Scalar>::parameter_count() const {
  Index n = token_embedding.size() + position_embedding.size() + final_gain.size() + final_bias.size() +
            head_parameter_count();
  for (const auto& l : layers) n += l.parameter_count();
  return n;
}

template <typename Scalar>
AdapterSet<Scalar> make_adapters(const ModelConfig& config, const LoraConfig& lora, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AdapterSet<Scalar> adapters(static_cast<std::size_t>(config.layers));
  for (auto& layer : adapters) {
    for (LoraTarget t : lora.targets) {
      layer[t] = make_lora_adapter<Scalar>(target_cols(config, t), target_rows(config, t), lora.rank,
                                           static_cast<Scalar>(lora.alpha), rng);
    }
  }
  return adapters;
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::create(const ModelConfig& config) {
  Model m;
  m.config = config;
  m.params = Parameters<Scalar>::init(config);
  m.adapters.resize(static_cast<std::size_t>(config.layers));
  return m;
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::create(const ModelConfig& config, const LoraConfig& lora) {
  Model m = create(config);
  m.adapters = make_adapters<Scalar>(config, lora, config.seed ^ 0x9e3779b97f4a7c15ULL);
  return m;
}

template <typename Scalar>
std::vector<Vector<Scalar>> layer_weights(const Parameters<Scalar>& params) {
  std::vector<Vector<Scalar>> out;
  out.reserve(params.layers.size());
  for (const auto& l : params.layers) out.push_back(l.flatten());
  return out;
}

template <typename Scalar>
GradSnapshot<Scalar> Gradients<Scalar>::layer_snapshot() const {
  return GradSnapshot<Scalar>{layer_weights(base)};
}

Batch Batch::from_sequences(const std::vector<std::vector<int>>& sequences, int pad_id) {
  std::size_t width = 0;
  for (const auto& s : sequences) width = std::max(width, s.size());
  Batch b;
  const auto rows = static_cast<Index>(sequences.size());
  const auto cols = static_cast<Index>(width);
  b.tokens.setConstant(rows, cols, pad_id);
  b.mask.setConstant(rows, cols, false);
  for (Index r = 0; r < rows; ++r) {
    const auto& s = sequences[static_cast<std::size_t>(r)];
    for (std::size_t c = 0; c < s.size(); ++c) {
      b.tokens(r, static_cast<Index>(c)) = s[c];
      b.mask(r, static_cast<Index>(c)) = true;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const Vector<Scalar>& gain, const Vector<Scalar>& bias,
                          LayerNormCache<Scalar>& cache) {
  const Index d = x.rows();
  const RowVector<Scalar> mean = x.colwise().mean();
  cache.normalized = x.rowwise() - mean;
  const RowVector<Scalar> var = cache.normalized.colwise().squaredNorm() / static_cast<Scalar>(d);
  cache.inv_std = (var.array() + static_cast<Scalar>(kLayerNormEps)).rsqrt().transpose();
  cache.normalized = cache.normalized * cache.inv_std.asDiagonal();
  Matrix<Scalar> y = gain.asDiagonal() * cache.normalized;
  y.colwise() += bias;
  return y;
}

// Returns dL/dx and accumulates gain/bias gradients.
template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& dy, const LayerNormCache<Scalar>& cache,
                                   const Vector<Scalar>& gain, Vector<Scalar>& dgain, Vector<Scalar>& dbias) {
  const auto& xhat = cache.normalized;
  dgain += (dy.array() * xhat.array()).rowwise().sum().matrix();
  dbias += dy.rowwise().sum();
  const Matrix<Scalar> dxhat = gain.asDiagonal() * dy;
  const RowVector<Scalar> mean_dxhat = dxhat.colwise().mean();
  const RowVector<Scalar> mean_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().mean();
  Matrix<Scalar> dx = dxhat.rowwise() - mean_dxhat;
  dx -= (xhat.array().rowwise() * mean_dxhat_xhat.array()).matrix();
  return dx * cache.inv_std.asDiagonal();
}

template <typename Scalar>
Scalar gelu(Scalar z) {
  const Scalar c = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  return Scalar(0.5) * z * (Scalar(1) + std::tanh(c * (z + Scalar(0.044715) * z * z * z)));
}

template <typename Scalar>
Scalar gelu_grad(Scalar z) {
  const Scalar c = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  const Scalar t = std::tanh(c * (z + Scalar(0.044715) * z * z * z));
  return Scalar(0.5) * (Scalar(1) + t) +
         Scalar(0.5) * z * (Scalar(1) - t * t) * c * (Scalar(1) + Scalar(3 * 0.044715) * z * z);
}

// `row` is a block view into the owning matrix.
template <typename RowXpr>
void softmax_row_inplace(RowXpr row) {
  const auto m = row.maxCoeff();
  row = (row.array() - m).exp().matrix();
  row /= row.sum();
}

// y = W x + b [+ (alpha/r) B (A x)]; stores A x in `hidden` when an adapter is present.
template <typename Scalar>
Matrix<Scalar> linear(const LayerParams<Scalar>& p, const LayerAdapters<Scalar>& adapters, LoraTarget t,
                      const Matrix<Scalar>& x, Matrix<Scalar>& hidden) {
  Matrix<Scalar> y = p.w(t) * x;
  y.colwise() += p.b(t);
  if (const auto& a = adapters[t]) {
    hidden = a->A * x;
    y.noalias() += a->scale() * (a->B * hidden);
  }
  return y;
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> p = logits;
  for (Index r = 0; r < p.rows(); ++r) softmax_row_inplace(p.row(r));
  return p;
}

template <typename Scalar>
ForwardTrace<Scalar> forward(const Model<Scalar>& model, const Batch& batch) {
  const auto& c = model.config;
  const auto& P = model.params;
  if (batch.tokens.rows() != batch.mask.rows() || batch.tokens.cols() != batch.mask.cols()) {
    throw InputError("batch tokens and mask differ in shape");
  }
  if (batch.size() == 0) throw InputError("empty batch");
  if (batch.tokens.cols() > c.max_len) {
    throw InputError("sequence length " + std::to_string(batch.tokens.cols()) + " exceeds max_len " +
                     std::to_string(c.max_len));
  }
  if (model.adapters.size() != static_cast<std::size_t>(c.layers)) {
    throw ContractError("adapter set does not match the layer count");
  }

  const Index dh = c.head_dim();
  const Scalar inv_sqrt_dh = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

  ForwardTrace<Scalar> trace;
  trace.logits.resize(batch.size(), c.classes);
  trace.examples.resize(static_cast<std::size_t>(batch.size()));

  for (Index e = 0; e < batch.size(); ++e) {
    auto& ex = trace.examples[static_cast<std::size_t>(e)];
    for (Index col = 0; col < batch.tokens.cols(); ++col) {
      if (!batch.mask(e, col)) continue;
      const int tok = batch.tokens(e, col);
      if (tok < 0 || tok >= c.vocab) {
        throw InputError("token id " + std::to_string(tok) + " outside vocabulary of size " + std::to_string(c.vocab));
      }
      ex.tokens.push_back(tok);
      ex.positions.push_back(static_cast<int>(col));
    }
    const auto n = static_cast<Index>(ex.tokens.size());
    if (n == 0) throw InputError("example " + std::to_string(e) + " has no tokens after padding");

    Matrix<Scalar> h(c.dim, n);
    for (Index p = 0; p < n; ++p) {
      h.col(p) = P.token_embedding.col(ex.tokens[static_cast<std::size_t>(p)]) +
                 P.position_embedding.col(ex.positions[static_cast<std::size_t>(p)]);
    }

    ex.layers.resize(static_cast<std::size_t>(c.layers));
    for (Index li = 0; li < c.layers; ++li) {
      const auto& lp = P.layers[static_cast<std::size_t>(li)];
      const auto& la = model.adapters[static_cast<std::size_t>(li)];
      auto& lc = ex.layers[static_cast<std::size_t>(li)];
      auto hidden = [&](LoraTarget t) -> Matrix<Scalar>& { return lc.lora_hidden[static_cast<int>(t)]; };

      lc.h_in = h;
      lc.attn_in = layer_norm(h, lp.ln1_gain, lp.ln1_bias, lc.ln1);
      lc.q = linear(lp, la, LoraTarget::Query, lc.attn_in, hidden(LoraTarget::Query));
      lc.k = linear(lp, la, LoraTarget::Key, lc.attn_in, hidden(LoraTarget::Key));
      lc.v = linear(lp, la, LoraTarget::Value, lc.attn_in, hidden(LoraTarget::Value));

      lc.context.resize(c.dim, n);
      lc.probs.resize(static_cast<std::size_t>(c.heads));
      for (Index hd = 0; hd < c.heads; ++hd) {
        auto& probs = lc.probs[static_cast<std::size_t>(hd)];
        probs.noalias() = lc.q.middleRows(hd * dh, dh).transpose() * lc.k.middleRows(hd * dh, dh);
        probs *= inv_sqrt_dh;
        for (Index r = 0; r < n; ++r) softmax_row_inplace(probs.row(r));
        lc.context.middleRows(hd * dh, dh).noalias() = lc.v.middleRows(hd * dh, dh) * probs.transpose();
      }
      h += linear(lp, la, LoraTarget::Output, lc.context, hidden(LoraTarget::Output));
      lc.h_mid = h;

      lc.ffn_in = layer_norm(h, lp.ln2_gain, lp.ln2_bias, lc.ln2);
      lc.ffn_pre = linear(lp, la, LoraTarget::FfnUp, lc.ffn_in, hidden(LoraTarget::FfnUp));
      lc.ffn_act = lc.ffn_pre.unaryExpr([](Scalar z) { return gelu(z); });
      h += linear(lp, la, LoraTarget::FfnDown, lc.ffn_act, hidden(LoraTarget::FfnDown));
      lc.h_out = h;
    }

    const Matrix<Scalar> final_states = layer_norm(h, P.final_gain, P.final_bias, ex.final_ln);
    ex.pooled = final_states.rowwise().mean();
    trace.logits.row(e) = (P.head_weight * ex.pooled + P.head_bias).transpose();
  }
  return trace;
}

template <typename Scalar>
HiddenStateTrace<Scalar> ForwardTrace<Scalar>::hidden_states() const {
  HiddenStateTrace<Scalar> out;
  if (examples.empty()) return out;
  const std::size_t layers = examples.front().layers.size();
  Index total = 0;
  for (const auto& ex : examples) total += static_cast<Index>(ex.tokens.size());
  const Index d = examples.front().layers.front().h_in.rows();
  out.layers.resize(layers);
  for (std::size_t li = 0; li < layers; ++li) {
    auto& s = out.layers[li];
    s.h_in.resize(d, total);
    s.h_out.resize(d, total);
    Index at = 0;
    for (const auto& ex : examples) {
      const Index n = static_cast<Index>(ex.tokens.size());
      s.h_in.middleCols(at, n) = ex.layers[li].h_in;
      s.h_out.middleCols(at, n) = ex.layers[li].h_out;
      at += n;
    }
  }
  return out;
}

template <typename Scalar>
Scalar loss(const Matrix<Scalar>& logits, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != logits.rows() || logits.rows() == 0) {
    throw InputError("loss: label count does not match the batch");
  }
  Scalar total = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= logits.cols()) throw InputError("label " + std::to_string(y) + " out of range");
    const Scalar m = logits.row(r).maxCoeff();
    const Scalar lse = m + std::log((logits.row(r).array() - m).exp().sum());
    total += lse - logits(r, y);
  }
  return total / static_cast<Scalar>(logits.rows());
}

// ---------------------------------------------------------------------------
// Backward

namespace {

template <typename Scalar>
struct BackwardContext {
  const Model<Scalar>& model;
  Gradients<Scalar>& grads;
  AdapterGrads which;
};

// Accumulates weight/bias/adapter gradients of y = linear(x) and returns dL/dx.
template <typename Scalar>
Matrix<Scalar> linear_backward(BackwardContext<Scalar>& ctx, std::size_t layer, LoraTarget t, const Matrix<Scalar>& dy,
                               const Matrix<Scalar>& x, const Matrix<Scalar>& hidden) {
  const auto& lp = ctx.model.params.layers[layer];
  auto& g = ctx.grads.base.layers[layer];
  g.w(t).noalias() += dy * x.transpose();
  g.b(t) += dy.rowwise().sum();
  Matrix<Scalar> dx = lp.w(t).transpose() * dy;

  if (const auto& a = ctx.model.adapters[layer][t]) {
    const Matrix<Scalar> dhidden = a->scale() * (a->B.transpose() * dy);
    if (ctx.which == AdapterGrads::All || a->enabled) {
      auto& slot = ctx.grads.adapters[layer][static_cast<int>(t)];
      if (!slot) slot = LoraGrad<Scalar>{Matrix<Scalar>::Zero(a->A.rows(), a->A.cols()),
                                         Matrix<Scalar>::Zero(a->B.rows(), a->B.cols())};
      slot->B.noalias() += a->scale() * (dy * hidden.transpose());
      slot->A.noalias() += dhidden * x.transpose();
    }
    dx.noalias() += a->A.transpose() * dhidden;
  }
  return dx;
}

}  // namespace

template <typename Scalar>
Gradients<Scalar> backward(const Model<Scalar>& model, const ForwardTrace<Scalar>& trace, std::span<const int> labels,
                           AdapterGrads which) {
  const auto& c = model.config;
  const auto& P = model.params;
  const Index batch = trace.logits.rows();
  if (static_cast<Index>(labels.size()) != batch || static_cast<Index>(trace.examples.size()) != batch) {
    throw ContractError("backward: trace and labels disagree on batch size");
  }

  Gradients<Scalar> grads;
  grads.base = Parameters<Scalar>::zeros_like(P);
  grads.adapters.resize(static_cast<std::size_t>(c.layers));
  BackwardContext<Scalar> ctx{model, grads, which};

  Matrix<Scalar> dlogits = softmax_rows(trace.logits);
  for (Index r = 0; r < batch; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= c.classes) throw InputError("label " + std::to_string(y) + " out of range");
    dlogits(r, y) -= Scalar(1);
  }
  dlogits /= static_cast<Scalar>(batch);

  const Index dh = c.head_dim();
  const Scalar inv_sqrt_dh = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

  for (Index e = 0; e < batch; ++e) {
    const auto& ex = trace.examples[static_cast<std::size_t>(e)];
    const Index n = static_cast<Index>(ex.tokens.size());
    const Vector<Scalar> dlogit = dlogits.row(e).transpose();

    grads.base.head_weight.noalias() += dlogit * ex.pooled.transpose();
    grads.base.head_bias += dlogit;
    const Vector<Scalar> dpooled = P.head_weight.transpose() * dlogit / static_cast<Scalar>(n);
    const Matrix<Scalar> dfinal = dpooled.replicate(1, n);
    Matrix<Scalar> dh_state =
        layer_norm_backward(dfinal, ex.final_ln, P.final_gain, grads.base.final_gain, grads.base.final_bias);

    for (Index li = c.layers - 1; li >= 0; --li) {
      const auto layer = static_cast<std::size_t>(li);
      const auto& lp = P.layers[layer];
      const auto& lc = ex.layers[layer];
      auto& lg = grads.base.layers[layer];
      auto hidden = [&](LoraTarget t) -> const Matrix<Scalar>& { return lc.lora_hidden[static_cast<int>(t)]; };

      // h_out = h_mid + ffn_down(gelu(ffn_up(ln2(h_mid))))
      const Matrix<Scalar> dact =
          linear_backward(ctx, layer, LoraTarget::FfnDown, dh_state, lc.ffn_act, hidden(LoraTarget::FfnDown));
      const Matrix<Scalar> dpre =
          (dact.array() * lc.ffn_pre.unaryExpr([](Scalar z) { return gelu_grad(z); }).array()).matrix();
      const Matrix<Scalar> dffn_in =
          linear_backward(ctx, layer, LoraTarget::FfnUp, dpre, lc.ffn_in, hidden(LoraTarget::FfnUp));
      dh_state += layer_norm_backward(dffn_in, lc.ln2, lp.ln2_gain, lg.ln2_gain, lg.ln2_bias);

      // h_mid = h_in + output(attention(ln1(h_in)))
      const Matrix<Scalar> dcontext =
          linear_backward(ctx, layer, LoraTarget::Output, dh_state, lc.context, hidden(LoraTarget::Output));
      Matrix<Scalar> dq(c.dim, n), dk(c.dim, n), dv(c.dim, n);
      for (Index hd = 0; hd < c.heads; ++hd) {
        const auto& probs = lc.probs[static_cast<std::size_t>(hd)];
        const auto dctx_h = dcontext.middleRows(hd * dh, dh);
        dv.middleRows(hd * dh, dh).noalias() = dctx_h * probs;
        const Matrix<Scalar> dprobs = dctx_h.transpose() * lc.v.middleRows(hd * dh, dh);
        const Vector<Scalar> row_dot = (dprobs.array() * probs.array()).rowwise().sum();
        Matrix<Scalar> dscores = (probs.array() * (dprobs.colwise() - row_dot).array()).matrix();
        dscores *= inv_sqrt_dh;
        dq.middleRows(hd * dh, dh).noalias() = lc.k.middleRows(hd * dh, dh) * dscores.transpose();
        dk.middleRows(hd * dh, dh).noalias() = lc.q.middleRows(hd * dh, dh) * dscores;
      }
      Matrix<Scalar> dattn_in =
          linear_backward(ctx, layer, LoraTarget::Query, dq, lc.attn_in, hidden(LoraTarget::Query));
      dattn_in += linear_backward(ctx, layer, LoraTarget::Key, dk, lc.attn_in, hidden(LoraTarget::Key));
      dattn_in += linear_backward(ctx, layer, LoraTarget::Value, dv, lc.attn_in, hidden(LoraTarget::Value));
      dh_state += layer_norm_backward(dattn_in, lc.ln1, lp.ln1_gain, lg.ln1_gain, lg.ln1_bias);
    }

    for (Index p = 0; p < n; ++p) {
      grads.base.token_embedding.col(ex.tokens[static_cast<std::size_t>(p)]) += dh_state.col(p);
      grads.base.position_embedding.col(ex.positions[static_cast<std::size_t>(p)]) += dh_state.col(p);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Instantiations

#define IRTUNE_INSTANTIATE_MODEL(S)                                                                            \
  template struct LayerParams<S>;                                                                              \
  template struct Parameters<S>;                                                                               \
  template struct Model<S>;                                                                                    \
  template struct Gradients<S>;                                                                                \
  template struct ForwardTrace<S>;                                                                             \
  template AdapterSet<S> make_adapters<S>(const ModelConfig&, const LoraConfig&, std::uint64_t);               \
  template ForwardTrace<S> forward<S>(const Model<S>&, const Batch&);                                          \
  template Matrix<S> softmax_rows<S>(const Matrix<S>&);                                                        \
  template S loss<S>(const Matrix<S>&, std::span<const int>);                                                  \
  template Gradients<S> backward<S>(const Model<S>&, const ForwardTrace<S>&, std::span<const int>, AdapterGrads); \
  template std::vector<Vector<S>> layer_weights<S>(const Parameters<S>&);

IRTUNE_INSTANTIATE_MODEL(double)
IRTUNE_INSTANTIATE_MODEL(float)

#undef IRTUNE_INSTANTIATE_MODEL

}  // namespace irtune
