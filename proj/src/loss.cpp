#include "flowkv/loss.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "flowkv/error.hpp"
#include "flowkv/rng.hpp"

namespace flowkv {

std::string_view to_string(DecayStrategy s) { return s == DecayStrategy::Nested ? "nested" : "isolated"; }

void InfoLossModel::validate() const {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw Error(ErrorKind::ConfigError, "alpha must lie in [0, 1)");
    if (dim < 2) throw Error(ErrorKind::ConfigError, "dim must be at least 2");
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
        throw Error(ErrorKind::ConfigError, "noise_scale must be finite and non-negative");
}

namespace {

void check_turns(int turns) {
    if (turns < 1) throw Error(ErrorKind::ConfigError, "decay trace needs T >= 1");
}

void check_alpha(double alpha) {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw Error(ErrorKind::ConfigError, "alpha must lie in [0, 1)");
}

constexpr std::uint64_t kInitialLabel = 0xC0C0C0C0ULL;

std::vector<double> gaussian_vector(std::uint64_t seed, std::size_t dim) {
    SplitMix64 rng(seed);
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.gaussian();
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

DecayTrace nested_trace(double alpha, int turns) {
    check_alpha(alpha);
    check_turns(turns);
    DecayTrace t{turns, 1.0, std::vector<double>(static_cast<std::size_t>(turns)), DecayStrategy::Nested};
    // error_coeffs[j] = alpha^(T-1-j); filled from the newest term backwards.
    double w = 1.0;
    for (int j = turns - 1; j >= 0; --j) {
        t.error_coeffs[static_cast<std::size_t>(j)] = w;
        w *= alpha;
    }
    t.signal_coeff = w;
    return t;
}

DecayTrace isolated_trace(double alpha, int turns) {
    check_alpha(alpha);
    check_turns(turns);
    return DecayTrace{turns, alpha, {1.0}, DecayStrategy::Isolated};
}

DecaySample simulate_decay(const InfoLossModel& model, int turns, DecayStrategy strategy) {
    model.validate();
    check_turns(turns);

    DecaySample out;
    out.initial_state = gaussian_vector(derive_seed(model.seed, kInitialLabel), model.dim);
    const double norm = std::sqrt(dot(out.initial_state, out.initial_state));
    for (auto& x : out.initial_state) x /= norm;
    const auto& c0 = out.initial_state;

    const int applications = strategy == DecayStrategy::Nested ? turns : 1;
    std::vector<double> state = c0;
    for (int j = 0; j < applications; ++j) {
        for (auto& x : state) x *= model.alpha;
        if (model.noise_scale > 0.0) {
            auto eps = gaussian_vector(derive_seed(model.seed, static_cast<std::uint64_t>(j)), model.dim);
            const double along = dot(eps, c0);
            for (std::size_t i = 0; i < eps.size(); ++i) state[i] += model.noise_scale * (eps[i] - along * c0[i]);
        }
    }

    out.signal_coeff = dot(state, c0) / dot(c0, c0);
    double err2 = 0.0;
    for (std::size_t i = 0; i < state.size(); ++i) {
        const double e = state[i] - out.signal_coeff * c0[i];
        err2 += e * e;
    }
    out.error_norm = std::sqrt(err2);
    out.final_state = std::move(state);
    return out;
}

std::vector<LossRow> loss_table(const InfoLossModel& model, int max_turns) {
    check_turns(max_turns);
    std::vector<LossRow> rows;
    for (int t = 1; t <= max_turns; ++t) {
        const auto nested = simulate_decay(model, t, DecayStrategy::Nested);
        const auto isolated = simulate_decay(model, t, DecayStrategy::Isolated);
        rows.push_back({t, nested.signal_coeff, isolated.signal_coeff, nested.error_norm, isolated.error_norm});
    }
    return rows;
}

std::string loss_csv(const std::vector<LossRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "turn,nested_signal,isolated_signal,nested_error_norm,isolated_error_norm\n";
    for (const auto& r : rows)
        os << r.turn << ',' << r.nested_signal << ',' << r.isolated_signal << ',' << r.nested_error_norm << ','
           << r.isolated_error_norm << '\n';
    return os.str();
}

}  // namespace flowkv
