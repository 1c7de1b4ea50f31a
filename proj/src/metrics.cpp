#include "glyph/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "glyph/error.hpp"
#include "glyph/format.hpp"
#include "glyph/injection.hpp"
#include "glyph/rng.hpp"
#include "glyph/version.hpp"

namespace glyph::metrics {

void EmbeddingSet::validate() const {
    if (!labels.empty() && labels.size() != vectors.size()) {
        raise(ErrorCode::MissingLabels,
              "label count " + std::to_string(labels.size()) + " does not match " +
                  std::to_string(vectors.size()) + " vectors");
    }
    for (const auto& v : vectors) {
        if (v.size() != vectors.front().size()) {
            raise(ErrorCode::DimensionMismatch, "embedding set mixes vector lengths");
        }
    }
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        raise(ErrorCode::LengthMismatch,
              "cosine of vectors with lengths " + std::to_string(a.size()) + " and " +
                  std::to_string(b.size()));
    }
    if (a.empty()) {
        raise(ErrorCode::LengthMismatch, "cosine of empty vectors");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    if (na == 0.0 || nb == 0.0) {
        raise(ErrorCode::ZeroVector, "cosine of a zero vector");
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double sim_cross(std::span<const float> text_embedding,
                 std::span<const float> other_embedding) {
    return cosine_similarity(text_embedding, other_embedding);
}

// ---- pairwise statistics ---------------------------------------------------------

namespace {

/// k-th unordered pair (i < j) of n items in lexicographic order.
std::pair<size_t, size_t> pair_at(size_t k, size_t n) {
    // Row i holds (n-1-i) pairs; cum(i) = i*(n-1) - i*(i-1)/2 pairs precede it.
    size_t lo = 0, hi = n - 1;
    auto cum = [n](size_t i) { return i * (n - 1) - i * (i - 1) / 2; };
    while (lo + 1 < hi) {
        const size_t mid = (lo + hi) / 2;
        if (cum(mid) <= k) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const size_t i = cum(hi) <= k ? hi : lo;
    return {i, i + 1 + (k - cum(i))};
}

/// Deterministic subsample of unordered distinct pairs. Full enumeration when
/// the budget covers it, else seeded rejection sampling without replacement,
/// emitted in ascending pair-index order.
std::vector<std::pair<size_t, size_t>> sample_pairs(size_t n, int64_t budget,
                                                    uint64_t seed) {
    const size_t total = n * (n - 1) / 2;
    std::vector<std::pair<size_t, size_t>> pairs;
    if (budget <= 0 || static_cast<size_t>(budget) >= total) {
        pairs.reserve(total);
        for (size_t i = 0; i + 1 < n; ++i) {
            for (size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
        }
        return pairs;
    }
    rng::SplitMix64 rng(seed);
    std::unordered_set<size_t> chosen;
    chosen.reserve(static_cast<size_t>(budget) * 2);
    while (chosen.size() < static_cast<size_t>(budget)) {
        chosen.insert(static_cast<size_t>(rng.below(total)));
    }
    std::vector<size_t> ordered(chosen.begin(), chosen.end());
    std::sort(ordered.begin(), ordered.end());
    pairs.reserve(ordered.size());
    for (size_t k : ordered) pairs.push_back(pair_at(k, n));
    return pairs;
}

struct MeanVar {
    double mean = 0.0;
    double variance = 0.0;  // population moment
};

MeanVar mean_and_variance(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, var};
}

}  // namespace

double z_score_from_embeddings(const std::vector<std::vector<float>>& clean,
                               const std::vector<std::vector<float>>& poisoned,
                               const ZScoreOptions& options) {
    if (clean.size() != poisoned.size()) {
        raise(ErrorCode::LengthMismatch,
              "clean and poisoned embedding counts differ");
    }
    if (clean.size() < 2) {
        raise(ErrorCode::TooFewPrompts, "z-score needs at least two prompts");
    }
    const auto pairs = sample_pairs(clean.size(), options.pair_budget, options.seed);
    std::vector<double> clean_sims, poisoned_sims;
    clean_sims.reserve(pairs.size());
    poisoned_sims.reserve(pairs.size());
    for (const auto& [i, j] : pairs) {
        clean_sims.push_back(cosine_similarity(clean[i], clean[j]));
        poisoned_sims.push_back(cosine_similarity(poisoned[i], poisoned[j]));
    }
    const MeanVar clean_stats = mean_and_variance(clean_sims);
    const MeanVar poisoned_stats = mean_and_variance(poisoned_sims);
    if (clean_stats.variance <= 0.0) {
        raise(ErrorCode::DegenerateVariance,
              "clean-pair similarities have zero variance");
    }
    const double denom = options.divide_by_std ? std::sqrt(clean_stats.variance)
                                               : clean_stats.variance;
    return (poisoned_stats.mean - clean_stats.mean) / denom;
}

double z_score(const model::Embedder& encoder, const text::Corpus& prompts,
               const triggers::TriggerSpec& trigger, uint64_t trigger_seed,
               const ZScoreOptions& options) {
    if (prompts.size() < 2) {
        raise(ErrorCode::TooFewPrompts, "z-score needs at least two prompts");
    }
    rng::SplitMix64 seeds(rng::derive_seed(trigger_seed, "zscore-triggers"));
    std::vector<std::vector<float>> clean, poisoned;
    clean.reserve(prompts.size());
    poisoned.reserve(prompts.size());
    for (const std::string& prompt : prompts.prompts) {
        clean.push_back(encoder.embed(prompt));
        poisoned.push_back(
            encoder.embed(triggers::insert_trigger_tpa(prompt, trigger, seeds.next())));
    }
    return z_score_from_embeddings(clean, poisoned, options);
}

double sim_target(const model::Embedder& teacher, const model::Embedder& student,
                  const text::Corpus& prompts, const triggers::BackdoorSpec& backdoor,
                  uint64_t seed) {
    const std::vector<size_t> eligible = train::eligible_prompt_indices(prompts, backdoor);
    if (eligible.empty()) {
        raise(ErrorCode::NoEligiblePrompts,
              "no prompt is eligible for backdoor '" + backdoor.id + "'");
    }
    rng::SplitMix64 seeds(rng::derive_seed(seed, "sim-target"));
    double acc = 0.0;
    for (size_t idx : eligible) {
        const train::PoisonedSample sample =
            train::make_poisoned_sample(prompts.prompts[idx], backdoor, seeds.next());
        const std::vector<float> target = teacher.embed(sample.target);
        const std::vector<float> poisoned = student.embed(sample.poisoned);
        acc += cosine_similarity(target, poisoned);
    }
    return acc / static_cast<double>(eligible.size());
}

double sim_clean(const model::Embedder& teacher, const model::Embedder& student,
                 const text::Corpus& prompts) {
    if (prompts.empty()) {
        raise(ErrorCode::EmptyCorpus, "sim_clean over an empty prompt set");
    }
    double acc = 0.0;
    for (const std::string& prompt : prompts.prompts) {
        acc += cosine_similarity(teacher.embed(prompt), student.embed(prompt));
    }
    return acc / static_cast<double>(prompts.size());
}

// ---- FID ---------------------------------------------------------------------------

namespace {

struct Moments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    bool shrinkage = false;
};

Moments gaussian_fit(const EmbeddingSet& set) {
    const size_t n = set.vectors.size();
    const size_t dim = set.vectors.front().size();
    Eigen::MatrixXd x(n, dim);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < dim; ++j) x(i, j) = set.vectors[i][j];
    }
    Moments m;
    m.mean = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - m.mean.transpose();
    m.cov = centered.transpose() * centered / static_cast<double>(n - 1);
    if (n <= dim) {
        const double lambda = 1e-6 * m.cov.trace() / static_cast<double>(dim);
        m.cov += lambda * Eigen::MatrixXd::Identity(dim, dim);
        m.shrinkage = true;
    }
    return m;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& sym) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
    Eigen::VectorXd eigs = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return solver.eigenvectors() * eigs.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

FidResult fid(const EmbeddingSet& real, const EmbeddingSet& generated) {
    real.validate();
    generated.validate();
    if (real.size() < 2 || generated.size() < 2) {
        raise(ErrorCode::TooFewSamples, "FID needs at least two vectors per set");
    }
    if (real.vectors.front().size() != generated.vectors.front().size()) {
        raise(ErrorCode::DimensionMismatch,
              "FID over sets with dimensions " +
                  std::to_string(real.vectors.front().size()) + " and " +
                  std::to_string(generated.vectors.front().size()));
    }
    const Moments r = gaussian_fit(real);
    const Moments g = gaussian_fit(generated);

    const Eigen::MatrixXd sqrt_r = psd_sqrt(r.cov);
    Eigen::MatrixXd inner = sqrt_r * g.cov * sqrt_r;
    inner = 0.5 * (inner + inner.transpose());  // kill asymmetric round-off
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(inner);
    const double trace_sqrt = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    FidResult out;
    out.value = (r.mean - g.mean).squaredNorm() + r.cov.trace() + g.cov.trace() -
                2.0 * trace_sqrt;
    out.shrinkage_applied = r.shrinkage || g.shrinkage;
    return out;
}

// ---- zero-shot classification ----------------------------------------------------------

ZeroShotResult zero_shot_classify(const EmbeddingSet& queries,
                                  const EmbeddingSet& classes) {
    queries.validate();
    classes.validate();
    if (queries.labels.empty() || queries.labels.size() != queries.vectors.size()) {
        raise(ErrorCode::MissingLabels, "queries need one label per vector");
    }
    if (classes.vectors.empty()) {
        raise(ErrorCode::InvalidValue, "zero-shot needs at least one class");
    }
    const int n_classes = static_cast<int>(classes.vectors.size());
    ZeroShotResult out;
    out.top_k = std::min(5, n_classes);
    out.predictions.reserve(queries.size());
    int hits1 = 0, hitsk = 0;
    for (size_t qi = 0; qi < queries.vectors.size(); ++qi) {
        std::vector<std::pair<double, int>> ranked;  // (-sim, class)
        ranked.reserve(n_classes);
        for (int c = 0; c < n_classes; ++c) {
            ranked.emplace_back(-cosine_similarity(queries.vectors[qi], classes.vectors[c]),
                                c);
        }
        // Sorting on (-sim, index) breaks ties toward the lower class index.
        std::sort(ranked.begin(), ranked.end());
        out.predictions.push_back(ranked.front().second);
        const int label = queries.labels[qi];
        if (ranked.front().second == label) ++hits1;
        for (int k = 0; k < out.top_k; ++k) {
            if (ranked[static_cast<size_t>(k)].second == label) {
                ++hitsk;
                break;
            }
        }
    }
    const double n = static_cast<double>(queries.size());
    out.acc_at_1 = n > 0 ? hits1 / n : 0.0;
    out.acc_at_5 = n > 0 ? hitsk / n : 0.0;
    return out;
}

// ---- report I/O ---------------------------------------------------------------------------

namespace {

std::string opt_str(const std::optional<double>& v) {
    return v ? format_double(*v) : "nan";
}

}  // namespace

void write_metrics_report(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        raise(ErrorCode::IoError, "cannot open report for writing: " + path);
    }
    out << "GLYPHREPORT " << kReportFormatVersion << "\n";
    out << "z_score " << opt_str(report.z_score) << "\n";
    out << "sim_target " << opt_str(report.sim_target) << "\n";
    out << "sim_clean " << opt_str(report.sim_clean) << "\n";
    out << "sim_cross " << opt_str(report.sim_cross) << "\n";
    out << "fid " << opt_str(report.fid) << "\n";
    out << "acc_at_1 " << opt_str(report.acc_at_1) << "\n";
    out << "acc_at_5 " << opt_str(report.acc_at_5) << "\n";
    out << "n_prompts " << report.n_prompts << "\n";
    out << "n_pairs " << report.n_pairs << "\n";
    out << "config_hash " << report.config_hash << "\n";
    for (const BackdoorMetrics& b : report.per_backdoor) {
        out << "backdoor." << b.id << ".z_score " << opt_str(b.z_score) << "\n";
        out << "backdoor." << b.id << ".sim_target " << opt_str(b.sim_target) << "\n";
    }
    if (!out) {
        raise(ErrorCode::IoError, "write failure on report: " + path);
    }
}

std::map<std::string, std::string> read_report_fields(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        raise(ErrorCode::IoError, "cannot open report: " + path);
    }
    std::string header;
    std::getline(in, header);
    if (header != "GLYPHREPORT 1") {
        raise(ErrorCode::VersionMismatch, "unsupported report header: " + header);
    }
    std::map<std::string, std::string> fields;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t sp = line.find(' ');
        if (sp == std::string::npos) {
            raise(ErrorCode::ParseError, "malformed report line: " + line);
        }
        fields[line.substr(0, sp)] = line.substr(sp + 1);
    }
    return fields;
}

}  // namespace glyph::metrics
