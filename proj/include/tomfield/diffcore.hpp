#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tomfield/matrix.hpp"
#include "tomfield/rng.hpp"

namespace tomfield {

/// Named parameter matrices with stable registration order. Shapes are
/// fixed at registration; contents can be mutated through `values`.
class ParamSet {
public:
    void add(std::string name, Matrix init);

    std::size_t size() const { return names_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    const Matrix& matrix(std::size_t i) const { return mats_[i]; }
    std::span<double> values(std::size_t i) { return mats_[i].values(); }

    std::optional<std::size_t> find(std::string_view name) const;
    const Matrix& at(std::string_view name) const;
    std::span<double> values(std::string_view name);

    std::size_t coordinate_count() const;

    bool operator==(const ParamSet&) const = default;

private:
    std::vector<std::string> names_;
    std::vector<Matrix> mats_;
};

using GradMap = std::map<std::string, Matrix, std::less<>>;

/// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) fill.
void init_uniform(std::span<double> values, std::size_t fan_in, Rng& rng);

/// Pure affine map without recording: input * weights + bias.
Matrix affine_forward(const Matrix& input, const Matrix& weights, const Matrix& bias);

struct NodeId {
    std::size_t index = 0;
};

enum class OpKind {
    constant,
    param,
    affine,
    tanh,
    relu,
    add,
    sub,
    mul,
    exp,
    scale,
    add_scalar,
    clamp,
    concat_cols,
    sum,
    mse,
    pass_through,
};

/// Reverse-mode tape. Every op stores its forward value; backward walks the
/// record in exact reverse order.
class Tape {
public:
    NodeId constant(Matrix value);
    NodeId param(const ParamSet& params, std::string_view name);

    NodeId affine(NodeId input, NodeId weights, NodeId bias);
    NodeId tanh(NodeId x);
    NodeId relu(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId exp(NodeId x);
    NodeId scale(NodeId x, double factor);
    NodeId add_scalar(NodeId x, double offset);
    // Gradient is zero where the input lies outside [lo, hi].
    NodeId clamp(NodeId x, double lo, double hi);
    NodeId concat_cols(NodeId left, NodeId right);
    NodeId sum(NodeId x);
    // Mean over all elements of (pred - target)^2.
    NodeId mse(NodeId pred, NodeId target);
    // Forward value supplied by the caller; adjoint is the identity.
    NodeId pass_through(NodeId x, Matrix forward_value);

    const Matrix& value(NodeId id) const { return nodes_.at(id.index).value; }
    OpKind kind(NodeId id) const { return nodes_.at(id.index).op; }
    std::size_t size() const { return nodes_.size(); }
    bool contains(OpKind op) const;

    /// d(loss)/d(param) for every parameter in `params`; parameters not
    /// reachable from `loss` get zero matrices.
    GradMap backward(NodeId loss, const ParamSet& params) const;

    /// Adjoint of every node, mainly for tests of individual ops.
    std::vector<Matrix> adjoints(NodeId loss) const;

private:
    struct Node {
        OpKind op = OpKind::constant;
        Matrix value;
        std::size_t in[2] = {0, 0};
        double a = 0.0;
        double b = 0.0;
        std::string param_name;
    };

    static Node make_node(OpKind op, Matrix value);
    NodeId push(Node node);
    const Node& node(NodeId id) const;

    std::vector<Node> nodes_;
};

using LossBuilder = std::function<NodeId(Tape&, const ParamSet&)>;

/// Max relative error between tape gradients and central differences at
/// `probes` random coordinates. Graphs containing pass-through nodes are
/// rejected since their adjoint is not the derivative of their forward map.
double grad_check(const LossBuilder& build, const ParamSet& params, std::size_t probes,
                  double epsilon, std::uint64_t seed = 1);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    GradMap first_moment;
    GradMap second_moment;
    std::int64_t step = 0;

    static AdamState init(const ParamSet& params, AdamConfig config = {});
};

void adam_step(ParamSet& params, const GradMap& grads, AdamState& state);

}  // namespace tomfield
