#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glyph/encoder.hpp"
#include "glyph/text.hpp"
#include "glyph/triggers.hpp"

namespace glyph::metrics {

struct EmbeddingSet {
    std::vector<std::vector<float>> vectors;
    std::vector<int> labels;  // optional; when present, one per vector

    size_t size() const { return vectors.size(); }
    void validate() const;  // equal lengths, labels count
};

/// <a,b> / (|a||b|), accumulated in double. Errors: LengthMismatch, ZeroVector.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Alias with the cross-encoder reading: both embeddings are supplied by the
/// caller (e.g. a text embedding and an external image-feature vector).
double sim_cross(std::span<const float> text_embedding,
                 std::span<const float> other_embedding);

struct ZScoreOptions {
    int64_t pair_budget = 10000;  // unordered distinct pairs, seeded subsample
    uint64_t seed = 0;
    bool divide_by_std = false;   // the printed formula divides by the variance
};

/// Separation statistic between poisoned-pair and clean-pair cosine
/// similarities: [mean(poisoned sims) - mean(clean sims)] / var(clean sims).
/// Both populations are evaluated over the same sampled pair set; variance is
/// the population moment. divide_by_std switches the denominator to sigma for
/// comparison with conventional z-scores.
double z_score_from_embeddings(const std::vector<std::vector<float>>& clean,
                               const std::vector<std::vector<float>>& poisoned,
                               const ZScoreOptions& options);

/// Embeds the prompts clean and trigger-poisoned under the same encoder and
/// applies z_score_from_embeddings. Prompts must already be filtered to
/// contain the trigger's target character.
double z_score(const model::Embedder& encoder, const text::Corpus& prompts,
               const triggers::TriggerSpec& trigger, uint64_t trigger_seed,
               const ZScoreOptions& options);

/// Mean cosine between the teacher's embedding of the backdoor target and the
/// student's embeddings of poisoned prompts. For TAA / erasure the target is
/// the per-prompt pair target.
double sim_target(const model::Embedder& teacher, const model::Embedder& student,
                  const text::Corpus& prompts, const triggers::BackdoorSpec& backdoor,
                  uint64_t seed);

/// Mean cosine between teacher and student embeddings of identical clean prompts.
double sim_clean(const model::Embedder& teacher, const model::Embedder& student,
                 const text::Corpus& prompts);

struct FidResult {
    double value = 0.0;
    bool shrinkage_applied = false;
};

/// Frechet distance between Gaussian fits of the two sets:
/// |mu_r - mu_g|^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}), with the matrix square
/// root taken through the symmetric eigendecomposition of
/// S_r^{1/2} S_g S_r^{1/2} (negative eigenvalues clamped to zero).
/// Covariances use the unbiased estimator; sets with n <= dim get diagonal
/// shrinkage S + (1e-6 trace(S)/dim) I, reported via shrinkage_applied.
FidResult fid(const EmbeddingSet& real, const EmbeddingSet& generated);

struct ZeroShotResult {
    double acc_at_1 = 0.0;
    double acc_at_5 = 0.0;  // top-k accuracy; k below
    int top_k = 5;          // min(5, class count)
    std::vector<int> predictions;
};

/// Assigns each labeled query to the class with the highest cosine
/// similarity; ties break toward the lowest class index.
ZeroShotResult zero_shot_classify(const EmbeddingSet& queries,
                                  const EmbeddingSet& classes);

struct BackdoorMetrics {
    std::string id;
    std::optional<double> z_score;
    std::optional<double> sim_target;
};

struct MetricsReport {
    std::optional<double> z_score;     // mean across backdoors
    std::optional<double> sim_target;  // mean across backdoors
    std::optional<double> sim_clean;
    std::optional<double> sim_cross;
    std::optional<double> fid;
    std::optional<double> acc_at_1;
    std::optional<double> acc_at_5;
    int64_t n_prompts = 0;
    int64_t n_pairs = 0;
    std::string config_hash;
    std::vector<BackdoorMetrics> per_backdoor;
};

/// Key-value document with a "GLYPHREPORT 1" header. Unset metrics emit as
/// "nan"; field names are stable.
void write_metrics_report(const MetricsReport& report, const std::string& path);
std::map<std::string, std::string> read_report_fields(const std::string& path);

}  // namespace glyph::metrics
