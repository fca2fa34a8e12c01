#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "floodcnn/svrkrig.hpp"

namespace floodcnn {

enum class DimKind { integer, real, real_log, categorical };

struct Dimension {
    std::string name;
    DimKind kind = DimKind::real;
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::string> choices;  // categorical only

    static Dimension integer(std::string name, long lo, long hi);
    static Dimension real(std::string name, double lo, double hi);
    static Dimension real_log(std::string name, double lo, double hi);
    static Dimension categorical(std::string name, std::vector<std::string> choices);
};

struct SearchSpace {
    std::vector<Dimension> dimensions;
    void validate() const;
};

// Values by dimension name. Integers are whole numbers, categorical values
// hold the chosen index.
using TrialConfig = std::map<std::string, double>;

enum class TrialStatus { ok, failed };

struct Trial {
    int index = 0;
    TrialConfig config;
    double objective = 0.0;
    TrialStatus status = TrialStatus::ok;
    std::string message;
};

struct SearchResult {
    Trial best;
    std::vector<Trial> trials;
};

enum class SearchStrategy { random, smbo };
SearchStrategy parse_strategy(const std::string& name);

using Objective = std::function<double(const TrialConfig&)>;

// Minimises the objective. An evaluation that throws or returns a non-finite
// value is recorded as failed. Trials run serially in index order.
SearchResult optimize(const SearchSpace& space, const Objective& objective, int budget,
                      SearchStrategy strategy, std::uint64_t seed);

// Text form of a configuration value (categorical choices by name).
std::string format_value(const SearchSpace& space, const std::string& name, double value);
void write_trials_csv(const std::string& path, const SearchSpace& space,
                      const std::vector<Trial>& trials);

// Architecture and optimiser choices for the CNN.
SearchSpace cnn_search_space();
SearchSpace svr_search_space();

// Per-control-point RMSE of a candidate.
using SvrEvaluator = std::function<std::vector<double>(const SvrParams&)>;
// Arg-min of summed RMSE; ties go to the smaller cost, then the smaller gamma.
SvrParams select_global_svr_params(const std::vector<SvrParams>& candidates, const SvrEvaluator& eval);

}  // namespace floodcnn
