#pragma once

// Linear warmup followed by either the modified Elastic Step Decay (ESD)
// schedule or a linear decay baseline.
//
// ESD over a horizon of T steps (t in [0, T]):
//   eta(t) = eta0                              for t <= (1 - r^l) T
//   eta(t) = eta0 * (1 / (2r))^(i - l)         for (1 - r^(i-1)) T < t <= (1 - r^i) T, i >= l + 1
// Stage i exists when r^(i-1) T >= 1; the last stage also absorbs t = T.
// Boundaries are decided exactly: r is carried as the exact rational r^2,
// so "t <= (1 - r^i) T" becomes the integer test (T - t)^2 den^i >= T^2 num^i.

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xbert {

using BigInt = boost::multiprecision::cpp_int;

/// Decay ratio r in (0, 1), stored through its exact square.
class DecayRatio {
public:
    /// r = sqrt(num / den). DecayRatio::sqrt_of(1, 2) is 2^(-1/2).
    static DecayRatio sqrt_of(std::uint64_t num, std::uint64_t den);
    /// r equal to the given double exactly (its binary value, squared exactly).
    static DecayRatio from_value(double r);

    double value() const noexcept { return value_; }
    const BigInt& square_num() const noexcept { return num_; }
    const BigInt& square_den() const noexcept { return den_; }

private:
    BigInt num_{1};
    BigInt den_{2};
    double value_ = 0.70710678118654752440;
};

enum class ScheduleKind { esd, linear };

std::string_view to_string(ScheduleKind kind) noexcept;
/// Throws ScheduleError for anything but "esd" / "linear".
ScheduleKind parse_schedule_kind(std::string_view text);

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::esd;
    double eta0 = 2e-3;
    DecayRatio r = DecayRatio::sqrt_of(1, 2);
    std::uint32_t ell = 6;
    /// Post-warmup horizon T. Set by schedule_value / Schedule from the overall budget.
    std::int64_t total_steps = 0;
    double warmup_proportion = 0.06;

    /// Throws ScheduleError when an invariant is broken.
    void check() const;
};

/// Named benchmark settings: a schedule and its overall step budget.
struct SchedulePreset {
    std::string name;
    ScheduleSpec spec;
    std::int64_t overall_steps = 0;
};

/// "bert-base-benchmark" (23000 steps, eta0 2e-3) or "bert-large-benchmark" (57500 steps, eta0 1e-3).
SchedulePreset schedule_preset(std::string_view name);
std::vector<std::string> schedule_preset_names();

struct EsdStage {
    std::uint32_t index = 0;  // i
    std::int64_t first_step = 0;
    std::int64_t last_step = 0;  // inclusive; first_step > last_step means the stage holds no integer step
    double value = 0;
    bool empty() const noexcept { return first_step > last_step; }
};

/// Stage table of one ESD horizon. Lookup is a binary search.
class EsdTable {
public:
    explicit EsdTable(const ScheduleSpec& spec);

    /// Throws ScheduleError when t is outside [0, T].
    double value(std::int64_t t) const;
    /// Stage index i for t (l for the constant phase).
    std::uint32_t stage_of(std::int64_t t) const;

    std::int64_t horizon() const noexcept { return horizon_; }
    /// Last step of the constant phase.
    std::int64_t constant_end() const noexcept { return constant_end_; }
    const std::vector<EsdStage>& stages() const noexcept { return stages_; }
    double eta0() const noexcept { return eta0_; }

private:
    std::int64_t horizon_;
    std::int64_t constant_end_;
    double eta0_;
    std::uint32_t ell_;
    std::vector<EsdStage> stages_;
};

/// Evaluates ESD at step t of the horizon spec.total_steps.
double esd_value(std::int64_t t, const ScheduleSpec& spec);

std::int64_t warmup_steps(std::int64_t overall_steps, double warmup_proportion) noexcept;

/// Warmup + decay over a whole step budget.
class Schedule {
public:
    Schedule(ScheduleSpec spec, std::int64_t overall_steps);

    /// Throws ScheduleError when global_step is outside [0, overall_steps].
    double at(std::int64_t global_step) const;

    std::int64_t overall_steps() const noexcept { return overall_; }
    std::int64_t warmup() const noexcept { return warmup_; }
    std::int64_t horizon() const noexcept { return overall_ - warmup_; }
    const ScheduleSpec& spec() const noexcept { return spec_; }
    /// Present for the ESD kind only.
    const std::optional<EsdTable>& esd() const noexcept { return esd_; }

    std::string summary() const;

private:
    ScheduleSpec spec_;
    std::int64_t overall_;
    std::int64_t warmup_;
    std::optional<EsdTable> esd_;
};

double schedule_value(std::int64_t global_step, std::int64_t overall_steps, const ScheduleSpec& spec);

/// Writes a "# ..." summary line, then "step\tlr" for every step 0..overall_steps.
void emit_trace(const ScheduleSpec& spec, std::int64_t overall_steps, const std::filesystem::path& out);

}  // namespace xbert
