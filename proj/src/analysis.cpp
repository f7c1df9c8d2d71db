#include "tomfield/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

namespace tomfield::analysis {

namespace {

std::string num(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace

// ---- vector fields ----------------------------------------------------------

Vec2 GridSpec::cell_center(std::size_t ix, std::size_t iy) const {
    const double dx = (x_max - x_min) / static_cast<double>(nx);
    const double dy = (y_max - y_min) / static_cast<double>(ny);
    return {x_min + (static_cast<double>(ix) + 0.5) * dx, y_min + (static_cast<double>(iy) + 0.5) * dy};
}

GridSpec default_grid(const envs::EnvConfig& env) {
    GridSpec g;
    if (env.kind == envs::EnvKind::highway) {
        const double half_lane = 0.5 * (env.lane_centers[1] - env.lane_centers[0]);
        g.x_min = env.world_min.x;
        g.x_max = env.world_min.x + env.start_x_spread + env.forward_speed * env.horizon;
        g.y_min = env.lane_centers.front() - half_lane;
        g.y_max = env.lane_centers.back() + half_lane;
        g.nx = 20;
        g.ny = 4 * env.lane_centers.size();
    } else {
        g.x_min = env.world_min.x;
        g.x_max = env.world_max.x;
        g.y_min = env.world_min.y;
        g.y_max = env.world_max.y;
        g.nx = 20;
        g.ny = 20;
    }
    return g;
}

VectorField extract_vector_field(const models::FsqModel& m, const fsq::LatentCode& code, const GridSpec& grid,
                                 Vec2 human) {
    if (code.q.size() != m.latent_width()) {
        throw DimensionError("vector field: code of width " + std::to_string(code.q.size()) + " for d=" +
                             std::to_string(m.latent_width()));
    }
    if (grid.nx == 0 || grid.ny == 0) throw ContractError("vector field: empty grid");
    VectorField f;
    f.grid = grid;
    f.code = code;
    f.human = human;
    std::vector<JointState> anchors;
    anchors.reserve(grid.cell_count());
    for (std::size_t iy = 0; iy < grid.ny; ++iy) {
        for (std::size_t ix = 0; ix < grid.nx; ++ix) {
            f.positions.push_back(grid.cell_center(ix, iy));
            anchors.push_back({f.positions.back(), human});
        }
    }
    Matrix latents(anchors.size(), code.q.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) std::copy(code.q.begin(), code.q.end(), latents.row_span(i).begin());
    // One batched decoder pass; the affine kernels parallelise over cells.
    const Matrix out = models::decode_batch(m.params, m.arch, m.anchor_scaler, latents, models::anchors_matrix(anchors));
    f.actions.resize(anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) f.actions[i] = {out(i, 0), out(i, 1)};
    return f;
}

Vec2 mean_human_position(const data::Dataset& ds) {
    Vec2 sum;
    std::size_t n = 0;
    for (const auto& t : ds.trajectories) {
        for (const auto& s : t.states) {
            sum += s.human;
            ++n;
        }
    }
    return n == 0 ? Vec2{} : sum * (1.0 / static_cast<double>(n));
}

void export_field_csv(const VectorField& field, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "x,y,ax,ay\n";
    for (std::size_t i = 0; i < field.positions.size(); ++i) {
        out << num(field.positions[i].x) << ',' << num(field.positions[i].y) << ',' << num(field.actions[i].x) << ','
            << num(field.actions[i].y) << '\n';
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<FieldRow> read_field_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != "x,y,ax,ay") throw ParseError("unexpected field CSV header", 1);
    std::vector<FieldRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        double v[4];
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int k = 0; k < 4; ++k) {
            const auto r = std::from_chars(p, end, v[k]);
            if (r.ec != std::errc{}) throw ParseError("bad number in field CSV", lineno);
            p = r.ptr;
            if (k < 3) {
                if (p == end || *p != ',') throw ParseError("expected ',' in field CSV", lineno);
                ++p;
            }
        }
        rows.push_back({{v[0], v[1]}, {v[2], v[3]}});
    }
    return rows;
}

std::string field_svg(const VectorField& field, const envs::EnvConfig& env) {
    const GridSpec& g = field.grid;
    const double width_units = g.x_max - g.x_min;
    const double height_units = g.y_max - g.y_min;
    const double px = 800.0 / width_units;
    const double py = std::max(200.0, 800.0 * height_units / width_units) / height_units;
    const double w = width_units * px;
    const double h = height_units * py;
    auto sx = [&](double x) { return (x - g.x_min) * px; };
    auto sy = [&](double y) { return h - (y - g.y_min) * py; };

    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h)
      << "\" viewBox=\"0 0 " << num(w) << ' ' << num(h) << "\">\n";
    s << "  <rect x=\"0\" y=\"0\" width=\"" << num(w) << "\" height=\"" << num(h) << "\" fill=\"white\"/>\n";
    if (env.kind == envs::EnvKind::highway) {
        for (std::size_t i = 0; i + 1 < env.lane_centers.size(); ++i) {
            const double y = sy(0.5 * (env.lane_centers[i] + env.lane_centers[i + 1]));
            s << "  <line x1=\"0\" y1=\"" << num(y) << "\" x2=\"" << num(w) << "\" y2=\"" << num(y)
              << "\" stroke=\"#999\" stroke-dasharray=\"8 6\"/>\n";
        }
    } else {
        for (const auto& d : env.obstacles) {
            s << "  <ellipse cx=\"" << num(sx(d.center.x)) << "\" cy=\"" << num(sy(d.center.y)) << "\" rx=\""
              << num(d.radius * px) << "\" ry=\"" << num(d.radius * py) << "\" fill=\"#bbb\"/>\n";
        }
        for (std::size_t i = 0; i < env.goals.size(); ++i) {
            s << "  <circle cx=\"" << num(sx(env.goals[i].x)) << "\" cy=\"" << num(sy(env.goals[i].y))
              << "\" r=\"6\" fill=\"none\" stroke=\"#2a7\" stroke-width=\"2\"><title>goal " << i << "</title></circle>\n";
        }
    }
    s << "  <circle cx=\"" << num(sx(field.human.x)) << "\" cy=\"" << num(sy(field.human.y))
      << "\" r=\"7\" fill=\"#777\"><title>human</title></circle>\n";

    double longest = 0.0;
    for (const auto& a : field.actions) longest = std::max(longest, a.norm());
    const double cell = std::min(width_units / static_cast<double>(g.nx) * px, height_units / static_cast<double>(g.ny) * py);
    const double unit = longest > 0.0 ? 0.8 * cell / longest : 0.0;
    s << "  <g stroke=\"#1a9e3a\" stroke-width=\"1.5\" fill=\"#1a9e3a\">\n";
    for (std::size_t i = 0; i < field.positions.size(); ++i) {
        const double x0 = sx(field.positions[i].x);
        const double y0 = sy(field.positions[i].y);
        const double dx = field.actions[i].x * unit;
        const double dy = -field.actions[i].y * unit;
        const double x1 = x0 + dx;
        const double y1 = y0 + dy;
        s << "    <line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1) << "\" y2=\"" << num(y1)
          << "\"/>\n";
        const double len = std::hypot(dx, dy);
        if (len > 1e-9) {
            const double ux = dx / len, uy = dy / len;
            const double head = std::min(4.0, 0.4 * len);
            s << "    <polygon points=\"" << num(x1) << ',' << num(y1) << ' ' << num(x1 - head * ux - 0.6 * head * uy)
              << ',' << num(y1 - head * uy + 0.6 * head * ux) << ' ' << num(x1 - head * ux + 0.6 * head * uy) << ','
              << num(y1 - head * uy - 0.6 * head * ux) << "\"/>\n";
        }
    }
    s << "  </g>\n";
    s << "  <text x=\"6\" y=\"16\" font-family=\"sans-serif\" font-size=\"13\">code " << field.code.index << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

void export_field_svg(const VectorField& field, const envs::EnvConfig& env, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << field_svg(field, env);
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

// ---- alignment error --------------------------------------------------------

double alignment_error(Vec2 pred, Vec2 reference) {
    const double np = pred.norm();
    const double nr = reference.norm();
    if (np < kMinDirectionNorm || nr < kMinDirectionNorm) {
        throw UndefinedDirectionError("alignment_error: zero-length vector has no direction");
    }
    const double cos = std::clamp(pred.dot(reference) / (np * nr), -1.0, 1.0);
    return 1.0 - cos;
}

double sequence_alignment_error(std::span<const Vec2> pred, std::span<const Vec2> reference) {
    if (pred.size() != reference.size()) {
        throw DimensionError("sequence_alignment_error: lengths " + std::to_string(pred.size()) + " and " +
                             std::to_string(reference.size()));
    }
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        if (pred[k].norm() < kMinDirectionNorm || reference[k].norm() < kMinDirectionNorm) continue;
        sum += alignment_error(pred[k], reference[k]);
        ++defined;
    }
    if (defined == 0) throw UndefinedDirectionError("sequence_alignment_error: no pair has a defined direction");
    return sum / static_cast<double>(defined);
}

// ---- clustering -------------------------------------------------------------

std::map<std::uint64_t, std::size_t> latent_histogram(const models::FsqModel& m, const data::Dataset& ds,
                                                      std::size_t history, std::size_t horizon) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        for (auto& w : data::window_samples(ds.trajectories[i], i, history, horizon)) rows.push_back(std::move(w.history));
    }
    std::map<std::uint64_t, std::size_t> h;
    if (rows.empty()) return h;
    for (std::uint64_t c : models::code_indices(m, models::windows_matrix(rows))) ++h[c];
    return h;
}

std::vector<std::uint64_t> final_window_codes(const models::FsqModel& m, const data::Dataset& ds,
                                              const std::vector<std::size_t>& ids) {
    std::vector<std::vector<double>> rows;
    rows.reserve(ids.size());
    for (std::size_t id : ids) {
        const auto& t = ds.trajectories.at(id);
        if (t.length() < m.history + m.horizon) throw ContractError("final window: trajectory too short");
        rows.push_back(data::flatten_history(t, t.length() - 1 - m.horizon, m.history));
    }
    if (rows.empty()) return {};
    return models::code_indices(m, models::windows_matrix(rows));
}

double cluster_purity(std::span<const std::uint64_t> codes, std::span<const int> labels) {
    if (codes.size() != labels.size()) throw DimensionError("cluster_purity: codes and labels differ in length");
    if (codes.empty()) return 0.0;
    std::map<std::uint64_t, std::map<int, std::size_t>> table;
    for (std::size_t i = 0; i < codes.size(); ++i) ++table[codes[i]][labels[i]];
    std::size_t majority = 0;
    for (const auto& [code, counts] : table) {
        std::size_t best = 0;
        for (const auto& [label, c] : counts) best = std::max(best, c);
        majority += best;
    }
    return static_cast<double>(majority) / static_cast<double>(codes.size());
}

double cluster_purity(const models::FsqModel& m, const data::Dataset& ds) {
    std::vector<std::size_t> ids(ds.trajectories.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    const auto codes = final_window_codes(m, ds, ids);
    std::vector<int> labels;
    labels.reserve(ids.size());
    for (const auto& t : ds.trajectories) labels.push_back(t.robot_label.value);
    return cluster_purity(codes, labels);
}

std::optional<std::uint64_t> dominant_code(const models::FsqModel& m, const data::Dataset& ds, BehaviorLabel label) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        if (!(ds.trajectories[i].robot_label == label)) continue;
        for (auto& w : data::window_samples(ds.trajectories[i], i, m.history, m.horizon)) rows.push_back(std::move(w.history));
    }
    if (rows.empty()) return std::nullopt;
    std::map<std::uint64_t, std::size_t> h;
    for (std::uint64_t c : models::code_indices(m, models::windows_matrix(rows))) ++h[c];
    return std::max_element(h.begin(), h.end(), [](const auto& a, const auto& b) { return a.second < b.second; })->first;
}

// ---- oracle -----------------------------------------------------------------

OracleConfig OracleConfig::for_env(const envs::EnvConfig& env, std::size_t horizon) {
    OracleConfig c;
    c.kind = env.kind;
    c.lane_centers = env.lane_centers;
    c.goals = env.goals;
    c.forward_speed = env.forward_speed;
    c.goal_speed = env.goal_speed;
    c.horizon = horizon;
    if (env.kind == envs::EnvKind::highway && env.lane_centers.size() >= 2) {
        c.lateral_dead_band = 0.1 * (env.lane_centers[1] - env.lane_centers[0]);
    }
    return c;
}

BehaviorLabel oracle_classify(const OracleConfig& cfg, std::span<const Vec2> robot) {
    if (robot.size() < 2) throw ContractError("oracle: segment needs at least 2 states");
    const Vec2 net = robot.back() - robot.front();
    if (cfg.kind == envs::EnvKind::highway) {
        if (net.y > cfg.lateral_dead_band) return envs::highway_label::merge_left;
        if (net.y < -cfg.lateral_dead_band) return envs::highway_label::merge_right;
        return envs::highway_label::stay_straight;
    }
    if (cfg.goals.empty()) throw ContractError("oracle: no goals configured");
    const Vec2 here = robot.back();
    int best = 0;
    if (net.norm() < 1e-9) {
        // Standing still: assume it is where it wants to be.
        for (std::size_t g = 1; g < cfg.goals.size(); ++g) {
            if ((cfg.goals[g] - here).norm() < (cfg.goals[static_cast<std::size_t>(best)] - here).norm()) {
                best = static_cast<int>(g);
            }
        }
        return {best};
    }
    double best_cos = -2.0;
    for (std::size_t g = 0; g < cfg.goals.size(); ++g) {
        const Vec2 to = cfg.goals[g] - here;
        const double n = to.norm();
        const double cos = n < 1e-12 ? 1.0 : to.dot(net) / (n * net.norm());
        if (cos > best_cos) {
            best_cos = cos;
            best = static_cast<int>(g);
        }
    }
    return {best};
}

std::vector<Vec2> oracle_predict(const OracleConfig& cfg, std::span<const Vec2> robot, const JointState& start) {
    const BehaviorLabel label = oracle_classify(cfg, robot);
    Vec2 action;
    if (cfg.kind == envs::EnvKind::highway) {
        if (cfg.lane_centers.empty()) throw ContractError("oracle: no lanes configured");
        // Target lanes are relative to the lane the observed segment started in.
        const double y0 = robot.front().y;
        int lane = 0;
        for (int i = 1; i < static_cast<int>(cfg.lane_centers.size()); ++i) {
            if (std::abs(cfg.lane_centers[i] - y0) < std::abs(cfg.lane_centers[lane] - y0)) lane = i;
        }
        const int shift = label == envs::highway_label::merge_left ? 1 : label == envs::highway_label::merge_right ? -1 : 0;
        const int target = std::clamp(lane + shift, 0, static_cast<int>(cfg.lane_centers.size()) - 1);
        // Aim at the target lane centre one horizon ahead.
        const Vec2 dir{cfg.forward_speed * static_cast<double>(cfg.horizon),
                       cfg.lane_centers[static_cast<std::size_t>(target)] - start.robot.y};
        action = dir.norm() < 1e-12 ? Vec2{} : dir * (cfg.forward_speed / dir.norm());
    } else {
        const Vec2 to = cfg.goals[static_cast<std::size_t>(label.value)] - start.robot;
        const double n = to.norm();
        action = n < 1e-12 ? Vec2{} : to * (cfg.goal_speed / n);
    }
    return std::vector<Vec2>(cfg.horizon, action);
}

// ---- comparison -------------------------------------------------------------

namespace {

std::vector<Vec2> robot_positions(const TrialInput& in) {
    std::vector<Vec2> out;
    for (std::size_t t = in.segment_begin; t <= in.segment_end; ++t) out.push_back(in.trajectory->states[t].robot);
    return out;
}

}  // namespace

Predictor fsq_predictor(const models::FsqModel& m) {
    return [&m](const TrialInput& in) { return models::predict(m, in.history, in.start); };
}

Predictor vae_predictor(const models::VaeModel& m) {
    return [&m](const TrialInput& in) { return models::vae_predict(m, in.history, in.start); };
}

Predictor oracle_predictor(const OracleConfig& cfg) {
    return [cfg](const TrialInput& in) { return oracle_predict(cfg, robot_positions(in), in.start); };
}

std::vector<JointState> sample_start_states(const envs::EnvConfig& env, const JointState& segment_end,
                                            std::size_t count, Rng& rng) {
    std::vector<JointState> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        JointState s = segment_end;
        if (env.kind == envs::EnvKind::highway) {
            s.robot.x = segment_end.robot.x + rng.uniform(-2.0, 2.0);
            s.robot.y = rng.uniform(env.lane_centers.front(), env.lane_centers.back());
        } else {
            const double m = env.start_margin;
            do {
                s.robot = {rng.uniform(env.world_min.x + m, env.world_max.x - m),
                           rng.uniform(env.world_min.y + m, env.world_max.y - m)};
            } while (envs::in_any_obstacle(env, s.robot, m));
        }
        out.push_back(s);
    }
    return out;
}

ComparisonReport compare(const Predictor& a, const Predictor& b, const data::Dataset& ds,
                         const std::vector<std::size_t>& held_out, const OracleConfig& oracle,
                         const CompareConfig& cfg, std::string name_a, std::string name_b) {
    if (held_out.empty()) throw ContractError("compare: no held-out trajectories");
    if (cfg.trials < 1 || cfg.starts < 1) throw ContractError("compare: trials and starts must be >= 1");
    if (cfg.min_segment < 2 || cfg.min_segment > cfg.max_segment || cfg.max_segment > cfg.history) {
        throw ContractError("compare: segment lengths must satisfy 2 <= min <= max <= H");
    }
    ComparisonReport report;
    report.name_a = std::move(name_a);
    report.name_b = std::move(name_b);
    const OracleConfig ref_cfg = oracle;
    Rng rng(cfg.seed);

    for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
        const std::size_t id = held_out[static_cast<std::size_t>(rng.below(held_out.size()))];
        const data::Trajectory& traj = ds.trajectories.at(id);
        const std::size_t len = cfg.min_segment + static_cast<std::size_t>(rng.below(cfg.max_segment - cfg.min_segment + 1));
        // The observed segment is the opening of the interaction.
        const std::size_t end = cfg.history - 1;
        if (end + ref_cfg.horizon >= traj.length()) throw ContractError("compare: trajectory too short for a trial");

        TrialInput in;
        in.trajectory = &traj;
        in.segment_end = end;
        in.segment_begin = end + 1 - len;
        in.history = data::flatten_history(traj, end, cfg.history);
        const auto segment = robot_positions(in);
        const auto starts = sample_start_states(ds.env, traj.states[end], cfg.starts, rng);

        double sum_a = 0.0, sum_b = 0.0;
        std::size_t n_a = 0, n_b = 0;
        for (std::size_t k = 0; k < starts.size(); ++k) {
            in.start = starts[k];
            const auto reference = oracle_predict(ref_cfg, segment, in.start);
            SampleRecord rec{trial, id, len, k, in.start, std::nullopt, std::nullopt};
            try {
                rec.error_a = sequence_alignment_error(a(in), reference);
                sum_a += *rec.error_a;
                ++n_a;
            } catch (const UndefinedDirectionError&) {
                ++report.skipped_a;
            }
            try {
                rec.error_b = sequence_alignment_error(b(in), reference);
                sum_b += *rec.error_b;
                ++n_b;
            } catch (const UndefinedDirectionError&) {
                ++report.skipped_b;
            }
            report.samples.push_back(rec);
        }
        if (n_a > 0 && n_b > 0) {
            report.trial_mean_a.push_back(sum_a / static_cast<double>(n_a));
            report.trial_mean_b.push_back(sum_b / static_cast<double>(n_b));
        }
    }

    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    report.mean_a = mean(report.trial_mean_a);
    report.mean_b = mean(report.trial_mean_b);
    try {
        report.test = paired_t_test(report.trial_mean_a, report.trial_mean_b);
    } catch (const DegenerateTestError&) {
        report.degenerate = true;
    }
    return report;
}

TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("paired_t_test: samples differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw DegenerateTestError("paired_t_test: need at least 2 pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(n - 1);
    if (!(var > 0.0)) throw DegenerateTestError("paired_t_test: differences have zero variance");
    TTest r;
    r.t = mean / std::sqrt(var / static_cast<double>(n));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    r.p = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))), 0.0, 1.0);
    return r;
}

void write_comparison_csv(const ComparisonReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "# comparison-report v1\n";
    out << "trial,trajectory,segment_length,start_index,start_robot_x,start_robot_y,error_" << report.name_a
        << ",error_" << report.name_b << '\n';
    for (const auto& s : report.samples) {
        out << s.trial << ',' << s.trajectory << ',' << s.segment_length << ',' << s.start_index << ','
            << num(s.start.robot.x) << ',' << num(s.start.robot.y) << ',' << (s.error_a ? num(*s.error_a) : "")
            << ',' << (s.error_b ? num(*s.error_b) : "") << '\n';
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace tomfield::analysis
