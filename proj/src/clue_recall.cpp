#include "cluetrace/clue_recall.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>

#include "cluetrace/error.hpp"

namespace cluetrace {

namespace {

std::string normalize_token(const std::string& text) {
    auto is_space = [](unsigned char ch) { return std::isspace(ch) != 0; };
    auto begin = std::find_if_not(text.begin(), text.end(), is_space);
    auto end = std::find_if_not(text.rbegin(), std::string::const_reverse_iterator(begin), is_space).base();
    std::string out(begin, end);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return out;
}

void check_instance(const PerceptionInstance& instance) {
    if (instance.category_token_texts.empty()) {
        reject("instance '" + instance.category + "' has no category tokens");
    }
    if (instance.gt_tokens.empty()) {
        reject("instance '" + instance.category + "' has an empty ground-truth token set");
    }
    if (*instance.gt_tokens.rbegin() >= instance.trace.layout.n_vis) {
        reject("instance '" + instance.category + "' has a ground-truth token outside the visual range");
    }
}

}  // namespace

std::vector<std::size_t> mention_steps(const std::vector<std::string>& output_texts,
                                       const std::vector<std::string>& category_token_texts) {
    std::vector<std::size_t> steps;
    const std::size_t m = category_token_texts.size();
    if (m == 0 || output_texts.size() < m) {
        return steps;
    }
    std::vector<std::string> needle(m);
    std::transform(category_token_texts.begin(), category_token_texts.end(), needle.begin(), normalize_token);
    std::vector<std::string> hay(output_texts.size());
    std::transform(output_texts.begin(), output_texts.end(), hay.begin(), normalize_token);

    std::vector<bool> hit(hay.size(), false);
    for (std::size_t t = 0; t + m <= hay.size(); ++t) {
        if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(t))) {
            std::fill_n(hit.begin() + static_cast<std::ptrdiff_t>(t), m, true);
        }
    }
    for (std::size_t t = 0; t < hit.size(); ++t) {
        if (hit[t]) {
            steps.push_back(t);
        }
    }
    return steps;
}

std::vector<std::size_t> mention_steps(const PerceptionInstance& instance) {
    return mention_steps(instance.trace.layout.output_texts, instance.category_token_texts);
}

std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    k = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (values[a] != values[b]) {
                              return values[a] > values[b];
                          }
                          return a < b;
                      });
    order.resize(k);
    return order;
}

std::optional<double> layer_recall(const PerceptionInstance& instance, std::size_t l) {
    const auto& trace = instance.trace;
    if (l >= trace.n_layers) {
        reject("layer " + std::to_string(l) + " outside trace with L=" + std::to_string(trace.n_layers));
    }
    check_instance(instance);
    const auto steps = mention_steps(instance);
    if (steps.empty()) {
        return std::nullopt;
    }
    std::vector<double> summed(trace.layout.n_vis, 0.0);
    for (std::size_t t : steps) {
        const auto row = visual_slice(trace, t, l);
        for (std::size_t v = 0; v < row.size(); ++v) {
            summed[v] += row[v];
        }
    }
    const std::size_t k = instance.gt_tokens.size();
    std::size_t hits = 0;
    for (std::size_t v : top_k_indices(summed, k)) {
        hits += instance.gt_tokens.count(v);
    }
    return static_cast<double>(hits) / static_cast<double>(k);
}

RecallTerm clue_recall(std::span<const PerceptionInstance> instances, std::size_t l) {
    RecallTerm term;
    double sum = 0.0;
    for (const auto& instance : instances) {
        if (const auto r = layer_recall(instance, l)) {
            sum += *r;
            ++term.n_used;
        } else {
            ++term.n_skipped;
        }
    }
    if (term.n_used == 0) {
        throw Error(ErrorCode::kEmptyEvaluation, "no mention steps in any instance");
    }
    term.value = sum / static_cast<double>(term.n_used);
    return term;
}

RecallReport scan_layers(std::span<const PerceptionInstance> instances) {
    if (instances.empty()) {
        throw Error(ErrorCode::kEmptyEvaluation, "no mention steps in any instance");
    }
    const std::size_t n_layers = instances.front().trace.n_layers;
    for (const auto& instance : instances) {
        if (instance.trace.n_layers != n_layers) {
            reject("instances disagree on layer count");
        }
    }
    if (n_layers == 0) {
        reject("traces have no layers");
    }
    RecallReport report;
    report.n_instances = instances.size();
    report.per_layer.reserve(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto term = clue_recall(instances, l);
        report.per_layer.push_back(term.value);
        report.n_skipped = term.n_skipped;
    }
    // max_element returns the first maximum, i.e. ties go to the smaller layer.
    report.l_max = static_cast<std::size_t>(
        std::distance(report.per_layer.begin(), std::max_element(report.per_layer.begin(), report.per_layer.end())));
    return report;
}

}  // namespace cluetrace
