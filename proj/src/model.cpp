#include "moe_orch/model.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "moe_orch/error.hpp"

namespace moe_orch {

namespace {

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale) {
  Matrix m(rows, cols);
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : m.data) v = dist(rng);
  return m;
}

std::vector<double> matvec(const Matrix& m, const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != m.cols)
    throw ShapeError("matrix-vector dimension mismatch");
  std::vector<double> y(m.rows, 0.0);
  for (int r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    for (int c = 0; c < m.cols; ++c) acc += m.at(r, c) * x[c];
    y[r] = acc;
  }
  return y;
}

}  // namespace

ModelWeights random_model(const ModelShape& shape, std::uint64_t seed) {
  shape.validate();
  std::mt19937_64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(shape.hidden_dim));
  ModelWeights model;
  model.experts.resize(shape.num_layers);
  for (int l = 0; l < shape.num_layers; ++l) {
    model.experts[l].reserve(shape.experts_per_layer);
    for (int e = 0; e < shape.experts_per_layer; ++e) {
      ExpertWeights w;
      w.w_in = random_matrix(shape.ffn_dim, shape.hidden_dim, rng, scale);
      w.w_gate = random_matrix(shape.ffn_dim, shape.hidden_dim, rng, scale);
      w.w_out = random_matrix(shape.hidden_dim, shape.ffn_dim, rng, scale);
      model.experts[l].push_back(std::move(w));
    }
    model.router.layers.push_back(
        random_matrix(shape.experts_per_layer, shape.hidden_dim, rng, scale));
  }
  return model;
}

std::vector<double> expert_ffn(const ExpertWeights& weights,
                               const std::vector<double>& x) {
  if (weights.w_in.rows != weights.w_gate.rows ||
      weights.w_in.cols != weights.w_gate.cols ||
      weights.w_out.cols != weights.w_in.rows ||
      weights.w_out.rows != weights.w_in.cols) {
    throw ShapeError("expert weight matrices are inconsistent");
  }
  std::vector<double> up = matvec(weights.w_in, x);
  const std::vector<double> gate = matvec(weights.w_gate, x);
  for (size_t i = 0; i < up.size(); ++i) up[i] = silu(up[i]) * gate[i];
  return matvec(weights.w_out, up);
}

std::vector<std::pair<int, double>> gate_topk(const RouterWeights& router,
                                              int layer,
                                              const std::vector<double>& x,
                                              int top_k) {
  if (layer < 0 || layer >= static_cast<int>(router.layers.size()))
    throw ShapeError("router layer index out of range");
  const std::vector<double> logits = matvec(router.layers[layer], x);
  const int n = static_cast<int>(logits.size());
  if (top_k < 1 || top_k > n) throw ShapeError("top_k out of range");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  order.resize(top_k);
  std::sort(order.begin(), order.end());

  // Softmax over the selected logits only.
  double max_logit = logits[order[0]];
  for (int id : order) max_logit = std::max(max_logit, logits[id]);
  double denom = 0.0;
  std::vector<std::pair<int, double>> result;
  result.reserve(top_k);
  for (int id : order) {
    const double w = std::exp(logits[id] - max_logit);
    denom += w;
    result.emplace_back(id, w);
  }
  for (auto& [id, w] : result) w /= denom;
  return result;
}

ForwardResult model_forward(const ModelShape& shape, const ModelWeights& weights,
                            const std::vector<std::vector<double>>& tokens,
                            ActivationSink sink, void* sink_ctx) {
  shape.validate();
  for (const auto& t : tokens)
    if (static_cast<int>(t.size()) != shape.hidden_dim)
      throw ShapeError("token width does not match hidden_dim");

  ForwardResult result;
  result.outputs = tokens;
  if (shape.num_layers == 0 || tokens.empty()) return result;

  TraceStep step;
  step.kind = tokens.size() == 1 ? StepKind::Decode : StepKind::Prefill;
  step.layers.resize(shape.num_layers);

  // Aggregated per-layer tallies: token counts and summed gate weights.
  std::vector<std::vector<int>> tally(
      shape.num_layers, std::vector<int>(shape.experts_per_layer, 0));
  std::vector<std::vector<double>> gate_sum(
      shape.num_layers, std::vector<double>(shape.experts_per_layer, 0.0));

  for (auto& x : result.outputs) {
    for (int l = 0; l < shape.num_layers; ++l) {
      const auto selected = gate_topk(weights.router, l, x, shape.top_k);
      std::vector<double> combined(shape.hidden_dim, 0.0);
      for (const auto& [expert, gate_w] : selected) {
        std::vector<double> y;
        if (sink != nullptr) {
          // Re-derive the post-SiLU activations for the recorder.
          const auto& w = weights.experts[l][expert];
          std::vector<double> up = matvec(w.w_in, x);
          for (auto& v : up) v = silu(v);
          sink(l, up, sink_ctx);
          const std::vector<double> gate = matvec(w.w_gate, x);
          for (size_t i = 0; i < up.size(); ++i) up[i] *= gate[i];
          y = matvec(w.w_out, up);
        } else {
          y = expert_ffn(weights.experts[l][expert], x);
        }
        for (int i = 0; i < shape.hidden_dim; ++i) combined[i] += gate_w * y[i];
        tally[l][expert] += 1;
        gate_sum[l][expert] += gate_w;
      }
      for (int i = 0; i < shape.hidden_dim; ++i) x[i] += combined[i];
    }
  }

  for (int l = 0; l < shape.num_layers; ++l) {
    for (int e = 0; e < shape.experts_per_layer; ++e) {
      if (tally[l][e] > 0) {
        step.layers[l].push_back(
            Selection{e, tally[l][e], gate_sum[l][e] / tally[l][e]});
      }
    }
  }
  result.trace.steps.push_back(std::move(step));
  return result;
}

namespace {

// Unnormalized popularity weight for expert rank r: (r+1)^(-skew).
std::vector<double> layer_popularity(const ModelShape& shape, double skew,
                                     std::uint64_t seed, int layer) {
  std::vector<double> weights(shape.experts_per_layer);
  for (int e = 0; e < shape.experts_per_layer; ++e)
    weights[e] = std::pow(static_cast<double>(e + 1), -skew);
  // Shuffle so the popular experts differ across layers.
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (layer + 1)));
  std::shuffle(weights.begin(), weights.end(), rng);
  return weights;
}

// Gumbel-top-k draw of top_k distinct experts from the categorical weights.
std::vector<int> sample_topk(const std::vector<double>& weights, int top_k,
                             std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(1e-12, 1.0);
  std::vector<std::pair<double, int>> keys;
  keys.reserve(weights.size());
  for (int e = 0; e < static_cast<int>(weights.size()); ++e) {
    const double g = -std::log(-std::log(unif(rng)));
    keys.emplace_back(std::log(weights[e]) + g, e);
  }
  std::partial_sort(keys.begin(), keys.begin() + top_k, keys.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<int> chosen(top_k);
  for (int i = 0; i < top_k; ++i) chosen[i] = keys[i].second;
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<double> random_gates(int k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  std::vector<double> g(k);
  double sum = 0.0;
  for (auto& v : g) {
    v = unif(rng);
    sum += v;
  }
  for (auto& v : g) v /= sum;
  return g;
}

}  // namespace

RoutingTrace synth_trace(const ModelShape& shape, double popularity_skew,
                         int input_len, int output_len, std::uint64_t seed) {
  shape.validate();
  if (input_len < 1) throw ValidationError("input_len must be >= 1");
  if (output_len < 0) throw ValidationError("output_len must be >= 0");

  std::vector<std::vector<double>> popularity(shape.num_layers);
  for (int l = 0; l < shape.num_layers; ++l)
    popularity[l] = layer_popularity(shape, popularity_skew, seed, l);

  std::mt19937_64 rng(seed);
  RoutingTrace trace;

  TraceStep prefill;
  prefill.kind = StepKind::Prefill;
  prefill.layers.resize(shape.num_layers);
  for (int l = 0; l < shape.num_layers; ++l) {
    std::vector<int> tally(shape.experts_per_layer, 0);
    std::vector<double> gate_sum(shape.experts_per_layer, 0.0);
    for (int t = 0; t < input_len; ++t) {
      const auto chosen = sample_topk(popularity[l], shape.top_k, rng);
      const auto gates = random_gates(shape.top_k, rng);
      for (int i = 0; i < shape.top_k; ++i) {
        tally[chosen[i]] += 1;
        gate_sum[chosen[i]] += gates[i];
      }
    }
    for (int e = 0; e < shape.experts_per_layer; ++e)
      if (tally[e] > 0)
        prefill.layers[l].push_back(Selection{e, tally[e], gate_sum[e] / tally[e]});
  }
  trace.steps.push_back(std::move(prefill));

  for (int t = 0; t < output_len; ++t) {
    TraceStep decode;
    decode.kind = StepKind::Decode;
    decode.layers.resize(shape.num_layers);
    for (int l = 0; l < shape.num_layers; ++l) {
      const auto chosen = sample_topk(popularity[l], shape.top_k, rng);
      const auto gates = random_gates(shape.top_k, rng);
      for (int i = 0; i < shape.top_k; ++i)
        decode.layers[l].push_back(Selection{chosen[i], 1, gates[i]});
    }
    trace.steps.push_back(std::move(decode));
  }
  return trace;
}

}  // namespace moe_orch
