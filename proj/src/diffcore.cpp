#include "tomfield/diffcore.hpp"

#include <algorithm>
#include <cmath>

#include "tomfield/errors.hpp"
#include "tomfield/kernels.hpp"

namespace tomfield {

// ---- ParamSet ---------------------------------------------------------------

void ParamSet::add(std::string name, Matrix init) {
    if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
    names_.push_back(std::move(name));
    mats_.push_back(std::move(init));
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return i;
    }
    return std::nullopt;
}

const Matrix& ParamSet::at(std::string_view name) const {
    const auto i = find(name);
    if (!i) throw ContractError("unknown parameter '" + std::string(name) + "'");
    return mats_[*i];
}

std::span<double> ParamSet::values(std::string_view name) {
    const auto i = find(name);
    if (!i) throw ContractError("unknown parameter '" + std::string(name) + "'");
    return mats_[*i].values();
}

std::size_t ParamSet::coordinate_count() const {
    std::size_t n = 0;
    for (const auto& m : mats_) n += m.size();
    return n;
}

void init_uniform(std::span<double> values, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (double& v : values) v = rng.uniform(-bound, bound);
}

Matrix affine_forward(const Matrix& input, const Matrix& weights, const Matrix& bias) {
    Matrix out;
    kernels::parallel::affine(input, weights, bias, out);
    return out;
}

// ---- Tape forward -----------------------------------------------------------

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shapes " + a.shape_string() + " and " +
                             b.shape_string());
    }
}

template <typename F>
Matrix map(const Matrix& x, F f) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return out;
}

void accumulate(Matrix& into, const Matrix& g) {
    if (into.empty() && !g.empty()) {
        into = g;
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) into[i] += g[i];
}

}  // namespace

Tape::Node Tape::make_node(OpKind op, Matrix value) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    return n;
}

NodeId Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return NodeId{nodes_.size() - 1};
}

const Tape::Node& Tape::node(NodeId id) const {
    if (id.index >= nodes_.size()) throw ContractError("node handle out of range");
    return nodes_[id.index];
}

NodeId Tape::constant(Matrix value) {
    return push(make_node(OpKind::constant, std::move(value)));
}

NodeId Tape::param(const ParamSet& params, std::string_view name) {
    Node n = make_node(OpKind::param, params.at(name));
    n.param_name = std::string(name);
    return push(std::move(n));
}

NodeId Tape::affine(NodeId input, NodeId weights, NodeId bias) {
    Matrix out;
    kernels::parallel::affine(node(input).value, node(weights).value, node(bias).value, out);
    Node n = make_node(OpKind::affine, std::move(out));
    n.in[0] = input.index;
    n.in[1] = weights.index;
    n.a = static_cast<double>(bias.index);
    return push(std::move(n));
}

NodeId Tape::tanh(NodeId x) {
    Node n = make_node(OpKind::tanh, map(node(x).value, [](double v) { return std::tanh(v); }));
    n.in[0] = x.index;
    return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
    Node n = make_node(OpKind::relu, map(node(x).value, [](double v) { return v > 0.0 ? v : 0.0; }));
    n.in[0] = x.index;
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Matrix& x = node(a).value;
    const Matrix& y = node(b).value;
    require_same_shape(x, y, "add");
    Matrix out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    Node n = make_node(OpKind::add, std::move(out));
    n.in[0] = a.index;
    n.in[1] = b.index;
    return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    const Matrix& x = node(a).value;
    const Matrix& y = node(b).value;
    require_same_shape(x, y, "sub");
    Matrix out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    Node n = make_node(OpKind::sub, std::move(out));
    n.in[0] = a.index;
    n.in[1] = b.index;
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Matrix& x = node(a).value;
    const Matrix& y = node(b).value;
    require_same_shape(x, y, "mul");
    Matrix out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    Node n = make_node(OpKind::mul, std::move(out));
    n.in[0] = a.index;
    n.in[1] = b.index;
    return push(std::move(n));
}

NodeId Tape::exp(NodeId x) {
    Node n = make_node(OpKind::exp, map(node(x).value, [](double v) { return std::exp(v); }));
    n.in[0] = x.index;
    return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double factor) {
    Node n = make_node(OpKind::scale, map(node(x).value, [factor](double v) { return v * factor; }));
    n.in[0] = x.index;
    n.a = factor;
    return push(std::move(n));
}

NodeId Tape::add_scalar(NodeId x, double offset) {
    Node n = make_node(OpKind::add_scalar, map(node(x).value, [offset](double v) { return v + offset; }));
    n.in[0] = x.index;
    n.a = offset;
    return push(std::move(n));
}

NodeId Tape::clamp(NodeId x, double lo, double hi) {
    Node n = make_node(OpKind::clamp, map(node(x).value, [lo, hi](double v) { return std::clamp(v, lo, hi); }));
    n.in[0] = x.index;
    n.a = lo;
    n.b = hi;
    return push(std::move(n));
}

NodeId Tape::concat_cols(NodeId left, NodeId right) {
    const Matrix& l = node(left).value;
    const Matrix& r = node(right).value;
    if (l.rows() != r.rows()) {
        throw DimensionError("concat_cols: shapes " + l.shape_string() + " and " + r.shape_string());
    }
    Matrix out(l.rows(), l.cols() + r.cols());
    for (std::size_t i = 0; i < l.rows(); ++i) {
        auto dst = out.row_span(i);
        std::copy(l.row_span(i).begin(), l.row_span(i).end(), dst.begin());
        std::copy(r.row_span(i).begin(), r.row_span(i).end(), dst.begin() + static_cast<std::ptrdiff_t>(l.cols()));
    }
    Node n = make_node(OpKind::concat_cols, std::move(out));
    n.in[0] = left.index;
    n.in[1] = right.index;
    return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
    double s = 0.0;
    for (double v : node(x).value.values()) s += v;
    Node n = make_node(OpKind::sum, Matrix(1, 1, s));
    n.in[0] = x.index;
    return push(std::move(n));
}

NodeId Tape::mse(NodeId pred, NodeId target) {
    const Matrix& p = node(pred).value;
    const Matrix& t = node(target).value;
    require_same_shape(p, t, "mse");
    if (p.empty()) throw DimensionError("mse: empty operands");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        s += d * d;
    }
    Node n = make_node(OpKind::mse, Matrix(1, 1, s / static_cast<double>(p.size())));
    n.in[0] = pred.index;
    n.in[1] = target.index;
    return push(std::move(n));
}

NodeId Tape::pass_through(NodeId x, Matrix forward_value) {
    require_same_shape(node(x).value, forward_value, "pass_through");
    Node n = make_node(OpKind::pass_through, std::move(forward_value));
    n.in[0] = x.index;
    return push(std::move(n));
}

bool Tape::contains(OpKind op) const {
    return std::any_of(nodes_.begin(), nodes_.end(), [op](const Node& n) { return n.op == op; });
}

// ---- Tape backward ----------------------------------------------------------

std::vector<Matrix> Tape::adjoints(NodeId loss) const {
    const Matrix& out = node(loss).value;
    if (out.rows() != 1 || out.cols() != 1) {
        throw ContractError("backward: loss must be 1x1, got " + out.shape_string());
    }
    std::vector<Matrix> grad(loss.index + 1);
    grad[loss.index] = Matrix(1, 1, 1.0);

    for (std::size_t k = loss.index + 1; k-- > 0;) {
        if (grad[k].empty()) continue;
        const Node& n = nodes_[k];
        const Matrix& g = grad[k];
        switch (n.op) {
            case OpKind::constant:
            case OpKind::param:
                break;
            case OpKind::affine: {
                const auto bias = static_cast<std::size_t>(n.a);
                Matrix dx, dw, db;
                kernels::parallel::affine_grad_input(g, nodes_[n.in[1]].value, dx);
                kernels::parallel::affine_grad_weights(nodes_[n.in[0]].value, g, dw);
                kernels::parallel::column_sum(g, db);
                accumulate(grad[n.in[0]], dx);
                accumulate(grad[n.in[1]], dw);
                accumulate(grad[bias], db);
                break;
            }
            case OpKind::tanh: {
                Matrix d(g.rows(), g.cols());
                for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * (1.0 - n.value[i] * n.value[i]);
                accumulate(grad[n.in[0]], d);
                break;
            }
            case OpKind::relu: {
                Matrix d(g.rows(), g.cols());
                for (std::size_t i = 0; i < g.size(); ++i) d[i] = n.value[i] > 0.0 ? g[i] : 0.0;
                accumulate(grad[n.in[0]], d);
                break;
            }
            case OpKind::add:
                accumulate(grad[n.in[0]], g);
                accumulate(grad[n.in[1]], g);
                break;
            case OpKind::sub: {
                accumulate(grad[n.in[0]], g);
                Matrix d = map(g, [](double v) { return -v; });
                accumulate(grad[n.in[1]], d);
                break;
            }
            case OpKind::mul: {
                const Matrix& x = nodes_[n.in[0]].value;
                const Matrix& y = nodes_[n.in[1]].value;
                Matrix dx(g.rows(), g.cols()), dy(g.rows(), g.cols());
                for (std::size_t i = 0; i < g.size(); ++i) {
                    dx[i] = g[i] * y[i];
                    dy[i] = g[i] * x[i];
                }
                accumulate(grad[n.in[0]], dx);
                accumulate(grad[n.in[1]], dy);
                break;
            }
            case OpKind::exp: {
                Matrix d(g.rows(), g.cols());
                for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * n.value[i];
                accumulate(grad[n.in[0]], d);
                break;
            }
            case OpKind::scale: {
                const double f = n.a;
                accumulate(grad[n.in[0]], map(g, [f](double v) { return v * f; }));
                break;
            }
            case OpKind::add_scalar:
            case OpKind::pass_through:
                accumulate(grad[n.in[0]], g);
                break;
            case OpKind::clamp: {
                const Matrix& x = nodes_[n.in[0]].value;
                Matrix d(g.rows(), g.cols());
                for (std::size_t i = 0; i < g.size(); ++i) d[i] = (x[i] >= n.a && x[i] <= n.b) ? g[i] : 0.0;
                accumulate(grad[n.in[0]], d);
                break;
            }
            case OpKind::concat_cols: {
                const Matrix& l = nodes_[n.in[0]].value;
                const Matrix& r = nodes_[n.in[1]].value;
                Matrix dl(l.rows(), l.cols()), dr(r.rows(), r.cols());
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    for (std::size_t j = 0; j < l.cols(); ++j) dl(i, j) = g(i, j);
                    for (std::size_t j = 0; j < r.cols(); ++j) dr(i, j) = g(i, l.cols() + j);
                }
                accumulate(grad[n.in[0]], dl);
                accumulate(grad[n.in[1]], dr);
                break;
            }
            case OpKind::sum: {
                const Matrix& x = nodes_[n.in[0]].value;
                accumulate(grad[n.in[0]], Matrix(x.rows(), x.cols(), g[0]));
                break;
            }
            case OpKind::mse: {
                const Matrix& p = nodes_[n.in[0]].value;
                const Matrix& t = nodes_[n.in[1]].value;
                const double f = 2.0 * g[0] / static_cast<double>(p.size());
                Matrix dp(p.rows(), p.cols()), dt(p.rows(), p.cols());
                for (std::size_t i = 0; i < p.size(); ++i) {
                    dp[i] = f * (p[i] - t[i]);
                    dt[i] = -dp[i];
                }
                accumulate(grad[n.in[0]], dp);
                accumulate(grad[n.in[1]], dt);
                break;
            }
        }
    }
    return grad;
}

GradMap Tape::backward(NodeId loss, const ParamSet& params) const {
    if (nodes_.empty()) throw ContractError("backward: empty tape");
    const auto grad = adjoints(loss);
    GradMap out;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& p = params.matrix(i);
        out.emplace(params.name(i), Matrix(p.rows(), p.cols()));
    }
    for (std::size_t k = 0; k < grad.size(); ++k) {
        const Node& n = nodes_[k];
        if (n.op != OpKind::param || grad[k].empty()) continue;
        auto it = out.find(n.param_name);
        if (it == out.end()) continue;
        accumulate(it->second, grad[k]);
    }
    return out;
}

// ---- grad_check -------------------------------------------------------------

double grad_check(const LossBuilder& build, const ParamSet& params, std::size_t probes,
                  double epsilon, std::uint64_t seed) {
    if (!(epsilon > 0.0)) throw ContractError("grad_check: epsilon must be positive");
    const std::size_t total = params.coordinate_count();
    if (total == 0) return 0.0;

    Tape tape;
    const NodeId loss = build(tape, params);
    if (tape.contains(OpKind::pass_through)) {
        throw ContractError("grad_check: graph contains a pass-through node");
    }
    const GradMap analytic = tape.backward(loss, params);
    for (const auto& [name, g] : analytic) {
        if (!g.all_finite()) throw NumericError("grad_check: non-finite gradient for '" + name + "'");
    }

    auto evaluate = [&](const ParamSet& p) {
        Tape t;
        const double v = t.value(build(t, p))[0];
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
        return v;
    };

    // Probe distinct coordinates when possible.
    std::vector<std::size_t> coords(total);
    for (std::size_t i = 0; i < total; ++i) coords[i] = i;
    Rng rng(seed);
    rng.shuffle(coords);
    if (probes < total) {
        coords.resize(probes);
    } else {
        while (coords.size() < probes) coords.push_back(static_cast<std::size_t>(rng.below(total)));
    }

    ParamSet work = params;
    double worst = 0.0;
    for (std::size_t flat : coords) {
        std::size_t pi = 0;
        while (flat >= work.matrix(pi).size()) {
            flat -= work.matrix(pi).size();
            ++pi;
        }
        auto vals = work.values(pi);
        const double orig = vals[flat];
        vals[flat] = orig + epsilon;
        const double up = evaluate(work);
        vals[flat] = orig - epsilon;
        const double down = evaluate(work);
        vals[flat] = orig;

        const double numeric = (up - down) / (2.0 * epsilon);
        const double exact = analytic.find(work.name(pi))->second[flat];
        const double rel = std::abs(exact - numeric) / std::max(1e-8, std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

// ---- Adam -------------------------------------------------------------------

AdamState AdamState::init(const ParamSet& params, AdamConfig config) {
    AdamState s;
    s.config = config;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& p = params.matrix(i);
        s.first_moment.emplace(params.name(i), Matrix(p.rows(), p.cols()));
        s.second_moment.emplace(params.name(i), Matrix(p.rows(), p.cols()));
    }
    return s;
}

void adam_step(ParamSet& params, const GradMap& grads, AdamState& state) {
    const AdamConfig& c = state.config;
    const std::int64_t t = state.step + 1;
    const double correct1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double correct2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));

    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.name(i);
        const auto git = grads.find(name);
        if (git == grads.end()) throw ContractError("adam_step: missing gradient for '" + name + "'");
        auto mit = state.first_moment.find(name);
        auto vit = state.second_moment.find(name);
        if (mit == state.first_moment.end() || vit == state.second_moment.end()) {
            throw ContractError("adam_step: state not initialised for '" + name + "'");
        }
        const Matrix& g = git->second;
        auto p = params.values(i);
        if (g.size() != p.size() || mit->second.size() != p.size()) {
            throw DimensionError("adam_step: gradient " + g.shape_string() + " for parameter '" + name +
                                 "' of shape " + params.matrix(i).shape_string());
        }
        Matrix& m = mit->second;
        Matrix& v = vit->second;
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
            const double mhat = m[k] / correct1;
            const double vhat = v[k] / correct2;
            p[k] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
        }
    }
    state.step = t;
}

}  // namespace tomfield
