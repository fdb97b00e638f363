#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace flowkv {

enum class DecayStrategy { Nested, Isolated };

std::string_view to_string(DecayStrategy s);

// Linear information-loss model: one compression maps a representation C to
// alpha * C + eps, eps ~ N(0, noise_scale^2 I) projected orthogonal to C_0.
struct InfoLossModel {
    double alpha = 0.5;
    std::size_t dim = 64;
    double noise_scale = 0.0;
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError
};

// Closed form of C_0 after T turns: signal_coeff * C_0 + sum_j error_coeffs[j] * eps_j.
struct DecayTrace {
    int turn = 0;
    double signal_coeff = 0.0;
    std::vector<double> error_coeffs;
    DecayStrategy strategy = DecayStrategy::Nested;
};

DecayTrace nested_trace(double alpha, int turns);
DecayTrace isolated_trace(double alpha, int turns);

struct DecaySample {
    std::vector<double> final_state;
    std::vector<double> initial_state;  // unit-norm C_0
    double signal_coeff = 0.0;          // <final, C_0> / |C_0|^2
    double error_norm = 0.0;            // |final - signal_coeff * C_0|
};

// Nested applies F to the running state once per turn; Isolated applies it to
// C_0 once and freezes the result. Both strategies draw the same eps_0 for a
// given seed, so their samples are paired.
DecaySample simulate_decay(const InfoLossModel& model, int turns, DecayStrategy strategy);

struct LossRow {
    int turn = 0;
    double nested_signal = 0.0;
    double isolated_signal = 0.0;
    double nested_error_norm = 0.0;
    double isolated_error_norm = 0.0;
};

std::vector<LossRow> loss_table(const InfoLossModel& model, int max_turns);
std::string loss_csv(const std::vector<LossRow>& rows);

}  // namespace flowkv
