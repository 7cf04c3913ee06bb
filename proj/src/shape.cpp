#include "moe_orch/shape.hpp"

#include "moe_orch/error.hpp"

namespace moe_orch {

void ModelShape::validate() const {
  if (num_layers < 0) throw ShapeError("num_layers must be non-negative");
  if (experts_per_layer <= 0 || top_k <= 0 || hidden_dim <= 0 || ffn_dim <= 0 ||
      bytes_per_param <= 0) {
    throw ShapeError("all shape counts must be strictly positive");
  }
  if (top_k > experts_per_layer) {
    throw ShapeError("top_k must not exceed experts_per_layer");
  }
}

ModelShape ModelShape::toy() {
  return ModelShape{.num_layers = 4,
                    .experts_per_layer = 8,
                    .top_k = 2,
                    .hidden_dim = 32,
                    .ffn_dim = 64,
                    .bytes_per_param = 2};
}

ModelShape ModelShape::mixtral_8x7b() {
  return ModelShape{.num_layers = 32,
                    .experts_per_layer = 8,
                    .top_k = 2,
                    .hidden_dim = 4096,
                    .ffn_dim = 14336,
                    .bytes_per_param = 2};
}

ModelShape ModelShape::preset(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "mixtral") return mixtral_8x7b();
  throw ConfigError("unknown shape preset: " + name);
}

}  // namespace moe_orch
