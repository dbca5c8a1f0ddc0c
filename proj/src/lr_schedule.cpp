#include "xbert/lr_schedule.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>

#include <fmt/format.h>

#include "xbert/error.hpp"

namespace xbert {

namespace mp = boost::multiprecision;

DecayRatio DecayRatio::sqrt_of(std::uint64_t num, std::uint64_t den) {
    if (num == 0 || den == 0 || num >= den) {
        throw ScheduleError(fmt::format("decay ratio sqrt({}/{}) must lie in (0, 1)", num, den));
    }
    DecayRatio r;
    r.num_ = num;
    r.den_ = den;
    r.value_ = static_cast<double>(std::sqrt(static_cast<long double>(num) / static_cast<long double>(den)));
    return r;
}

DecayRatio DecayRatio::from_value(double value) {
    if (!(value > 0.0 && value < 1.0)) {
        throw ScheduleError(fmt::format("decay ratio r must lie in (0, 1), got {}", value));
    }
    int exp = 0;
    const double mant = std::frexp(value, &exp);  // value = mant * 2^exp, mant in [0.5, 1)
    const auto m = static_cast<std::uint64_t>(std::ldexp(mant, 53));
    const int shift = 53 - exp;  // value = m / 2^shift
    DecayRatio r;
    r.num_ = BigInt(m) * BigInt(m);
    r.den_ = BigInt(1) << (2 * shift);
    r.value_ = value;
    return r;
}

std::string_view to_string(ScheduleKind kind) noexcept { return kind == ScheduleKind::esd ? "esd" : "linear"; }

ScheduleKind parse_schedule_kind(std::string_view text) {
    if (text == "esd") {
        return ScheduleKind::esd;
    }
    if (text == "linear") {
        return ScheduleKind::linear;
    }
    throw ScheduleError(fmt::format("unknown schedule kind '{}' (expected esd or linear)", text));
}

void ScheduleSpec::check() const {
    if (!(eta0 > 0)) {
        throw ScheduleError("eta0 must be positive");
    }
    if (ell < 1) {
        throw ScheduleError("ell must be at least 1");
    }
    if (!(warmup_proportion >= 0 && warmup_proportion < 1)) {
        throw ScheduleError("warmup_proportion must lie in [0, 1)");
    }
    if (total_steps < 0) {
        throw ScheduleError("total_steps must be non-negative");
    }
}

SchedulePreset schedule_preset(std::string_view name) {
    SchedulePreset p;
    p.name = std::string(name);
    if (name == "bert-base-benchmark") {
        p.spec.eta0 = 2e-3;
        p.overall_steps = 23000;
    } else if (name == "bert-large-benchmark") {
        p.spec.eta0 = 1e-3;
        p.overall_steps = 57500;
    } else {
        throw ScheduleError(fmt::format("unknown schedule preset '{}'", name));
    }
    return p;
}

std::vector<std::string> schedule_preset_names() { return {"bert-base-benchmark", "bert-large-benchmark"}; }

namespace {

// Smallest k >= 0 with k^2 * den >= num (that is, ceil(sqrt(num / den))).
BigInt ceil_sqrt_ratio(const BigInt& num, const BigInt& den) {
    BigInt k = mp::sqrt(BigInt(num / den));
    while (k * k * den < num) {
        ++k;
    }
    while (k > 0 && (k - 1) * (k - 1) * den >= num) {
        --k;
    }
    return k;
}

}  // namespace

EsdTable::EsdTable(const ScheduleSpec& spec) : horizon_(spec.total_steps), eta0_(spec.eta0), ell_(spec.ell) {
    spec.check();
    const BigInt T = horizon_;
    const BigInt T2 = T * T;
    const BigInt& n = spec.r.square_num();
    const BigInt& d = spec.r.square_den();

    // y_i = r^i T; y_i^2 = T^2 n^i / d^i. Boundary floor((1 - r^i) T) = T - ceil(y_i).
    BigInt npow = mp::pow(n, ell_);
    BigInt dpow = mp::pow(d, ell_);
    auto ceil_y = [&](const BigInt& np, const BigInt& dp) { return ceil_sqrt_ratio(T2 * np, dp); };

    const bool has_stages = T2 * npow >= dpow;  // r^l T >= 1
    if (!has_stages) {
        constant_end_ = horizon_;
        return;
    }
    constant_end_ = static_cast<std::int64_t>(T - ceil_y(npow, dpow));

    // (1 / (2r))^2 = d / (4n)
    const long double factor_sq = d.convert_to<long double>() / (4.0L * n.convert_to<long double>());
    for (std::uint32_t i = ell_ + 1;; ++i) {
        // Stage i exists iff r^(i-1) T >= 1; npow/dpow currently hold r^(i-1).
        if (T2 * npow < dpow) {
            break;
        }
        EsdStage st;
        st.index = i;
        st.first_step = static_cast<std::int64_t>(T - ceil_y(npow, dpow)) + 1;
        npow *= n;
        dpow *= d;
        st.last_step = static_cast<std::int64_t>(T - ceil_y(npow, dpow));
        st.value = static_cast<double>(static_cast<long double>(eta0_) * std::pow(factor_sq, static_cast<long double>(i - ell_) / 2.0L));
        stages_.push_back(st);
    }
    stages_.back().last_step = horizon_;
}

std::uint32_t EsdTable::stage_of(std::int64_t t) const {
    if (t < 0 || t > horizon_) {
        throw ScheduleError(fmt::format("step {} outside the ESD horizon [0, {}]", t, horizon_));
    }
    if (t <= constant_end_) {
        return ell_;
    }
    auto it = std::lower_bound(stages_.begin(), stages_.end(), t, [](const EsdStage& s, std::int64_t step) { return s.last_step < step; });
    return it->index;
}

double EsdTable::value(std::int64_t t) const {
    const auto i = stage_of(t);
    return i == ell_ ? eta0_ : stages_[i - ell_ - 1].value;
}

double esd_value(std::int64_t t, const ScheduleSpec& spec) {
    if (spec.kind != ScheduleKind::esd) {
        throw ScheduleError("esd_value needs an esd schedule");
    }
    // Per-step callers evaluate one spec many times; rebuilding the exact table each call dominates.
    struct Cached {
        std::int64_t total_steps;
        double eta0;
        std::uint32_t ell;
        BigInt num, den;
        EsdTable table;
    };
    thread_local std::optional<Cached> cache;
    if (!cache || cache->total_steps != spec.total_steps || cache->eta0 != spec.eta0 || cache->ell != spec.ell ||
        cache->num != spec.r.square_num() || cache->den != spec.r.square_den()) {
        cache.reset();
        cache.emplace(Cached{spec.total_steps, spec.eta0, spec.ell, spec.r.square_num(), spec.r.square_den(), EsdTable(spec)});
    }
    return cache->table.value(t);
}

std::int64_t warmup_steps(std::int64_t overall_steps, double warmup_proportion) noexcept {
    return std::llround(warmup_proportion * static_cast<double>(overall_steps));
}

Schedule::Schedule(ScheduleSpec spec, std::int64_t overall_steps) : spec_(std::move(spec)), overall_(overall_steps) {
    if (overall_ < 0) {
        throw ScheduleError("overall step budget must be non-negative");
    }
    spec_.check();
    warmup_ = warmup_steps(overall_, spec_.warmup_proportion);
    spec_.total_steps = overall_ - warmup_;
    if (spec_.kind == ScheduleKind::esd) {
        esd_.emplace(spec_);
    }
}

double Schedule::at(std::int64_t global_step) const {
    if (global_step < 0 || global_step > overall_) {
        throw ScheduleError(fmt::format("step {} outside [0, {}]", global_step, overall_));
    }
    if (global_step < warmup_) {
        return spec_.eta0 * static_cast<double>(global_step) / static_cast<double>(warmup_);
    }
    const std::int64_t t = global_step - warmup_;
    if (esd_) {
        return esd_->value(t);
    }
    const std::int64_t T = spec_.total_steps;
    if (T == 0) {
        return spec_.eta0;
    }
    return spec_.eta0 * (1.0 - static_cast<double>(t) / static_cast<double>(T));
}

std::string Schedule::summary() const {
    std::string s = fmt::format("# kind={} eta0={:.17g} overall_steps={} warmup_steps={} horizon={}", to_string(spec_.kind), spec_.eta0,
                                overall_, warmup_, horizon());
    if (esd_) {
        s += fmt::format(" r={:.17g} ell={} constant_end={} stages=", spec_.r.value(), spec_.ell, warmup_ + esd_->constant_end());
        bool first = true;
        for (const auto& st : esd_->stages()) {
            s += fmt::format("{}i{}:{}-{}:{:.17g}", first ? "" : ",", st.index, warmup_ + st.first_step, warmup_ + st.last_step, st.value);
            first = false;
        }
    }
    return s;
}

double schedule_value(std::int64_t global_step, std::int64_t overall_steps, const ScheduleSpec& spec) {
    return Schedule(spec, overall_steps).at(global_step);
}

void emit_trace(const ScheduleSpec& spec, std::int64_t overall_steps, const std::filesystem::path& out) {
    const Schedule sched(spec, overall_steps);
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw ScheduleError("cannot open trace file " + out.string());
    }
    f << sched.summary() << '\n';
    fmt::memory_buffer buf;
    for (std::int64_t k = 0; k <= overall_steps; ++k) {
        fmt::format_to(std::back_inserter(buf), "{}\t{:.17g}\n", k, sched.at(k));
    }
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) {
        throw ScheduleError("I/O error writing trace " + out.string());
    }
}

}  // namespace xbert
