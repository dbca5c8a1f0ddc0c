#pragma once

#include <charconv>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

namespace xbert {

/// Finetuning hyperparameters. Member order is the tie-break order: on equal
/// metrics the lexicographically smallest tuple wins.
struct Hyperparams {
    double learning_rate = 5e-5;
    std::int64_t batch_size = 32;
    std::int64_t epochs = 5;
    std::int64_t warmup_steps = 50;
    double weight_decay = 0.01;
    std::string scheduler = "polynomial";

    auto operator<=>(const Hyperparams&) const = default;
    bool operator==(const Hyperparams&) const = default;

    /// (key, value) pairs in tuple order; numbers in shortest round-trip form.
    std::vector<std::pair<std::string, std::string>> fields() const {
        return {{"learning_rate", fmt::format("{}", learning_rate)},
                {"batch_size", fmt::format("{}", batch_size)},
                {"epochs", fmt::format("{}", epochs)},
                {"warmup_steps", fmt::format("{}", warmup_steps)},
                {"weight_decay", fmt::format("{}", weight_decay)},
                {"scheduler", scheduler}};
    }

    /// Directory name of a grid point, e.g. "lr3e-05_bs16_ep3".
    std::string run_name() const { return fmt::format("lr{}_bs{}_ep{}", learning_rate, batch_size, epochs); }

    /// Sets one field from its textual form. False for an unknown key or unparsable value.
    bool set(std::string_view key, std::string_view value) {
        auto num = [&](auto& out) {
            auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
            return ec == std::errc() && p == value.data() + value.size();
        };
        if (key == "learning_rate") return num(learning_rate);
        if (key == "batch_size") return num(batch_size);
        if (key == "epochs") return num(epochs);
        if (key == "warmup_steps") return num(warmup_steps);
        if (key == "weight_decay") return num(weight_decay);
        if (key == "scheduler") {
            scheduler = std::string(value);
            return !scheduler.empty();
        }
        return false;
    }
};

}  // namespace xbert
