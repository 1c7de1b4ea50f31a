#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "glyph/autodiff.hpp"
#include "glyph/encoder.hpp"
#include "glyph/rng.hpp"
#include "glyph/text.hpp"
#include "glyph/triggers.hpp"

namespace glyph::train {

enum class DistanceKind { NegCosine, MSE, MAE, Poincare };

DistanceKind parse_distance_kind(const std::string& name);
const char* distance_kind_name(DistanceKind kind);

struct DistanceMetric {
    DistanceKind kind = DistanceKind::NegCosine;
    double poincare_epsilon = 1e-5;  // ball clamp, must lie in (0, 0.1)

    void validate() const;
};

/// Distance between two equal-shaped embeddings as a differentiable scalar.
/// NegCosine: -<a,b>/(|a||b|). MSE / MAE: mean squared / absolute error.
/// Poincare: arcosh(1 + 2|a-b|^2 / ((1-|a|^2)(1-|b|^2))) after jointly
/// rescaling both vectors into the open unit ball by (1-eps)/max(|a|,|b|,1).
template <typename Real>
ad::Tensor<Real> distance_graph(ad::Tape<Real>& tape, ad::Tensor<Real> a,
                                ad::Tensor<Real> b, const DistanceMetric& metric);

/// Plain numeric evaluation of the same computation.
double distance(std::span<const double> a, std::span<const double> b,
                const DistanceMetric& metric);

/// Frozen-teacher embedding oracle with a memo cache keyed by prompt text.
template <typename Real>
class TeacherOracle {
public:
    TeacherOracle(const model::TextEncoderT<Real>& teacher, const text::Vocab& vocab,
                  model::EmbeddingView view)
        : teacher_(&teacher), vocab_(&vocab), view_(view) {}

    const std::vector<Real>& embed(const std::string& prompt);
    model::EmbeddingView view() const { return view_; }

private:
    const model::TextEncoderT<Real>* teacher_;
    const text::Vocab* vocab_;
    model::EmbeddingView view_;
    std::unordered_map<std::string, std::vector<Real>> cache_;
};

struct PoisonedSample {
    std::string poisoned;
    std::string target;
};

/// Mean distance between the teacher's embedding of each pair target and the
/// student's embedding of the poisoned prompt. Teacher values enter the
/// graph as constants, so gradient flows into the student only.
template <typename Real>
ad::Tensor<Real> backdoor_loss_graph(ad::Tape<Real>& tape, TeacherOracle<Real>& teacher,
                                     const model::TextEncoderT<Real>& student,
                                     std::span<const PoisonedSample> batch,
                                     const text::Vocab& vocab,
                                     const DistanceMetric& metric,
                                     model::EmbeddingView view);

/// Mean distance between teacher and student embeddings of the same clean
/// prompts.
template <typename Real>
ad::Tensor<Real> utility_loss_graph(ad::Tape<Real>& tape, TeacherOracle<Real>& teacher,
                                    const model::TextEncoderT<Real>& student,
                                    std::span<const std::string> clean_batch,
                                    const text::Vocab& vocab,
                                    const DistanceMetric& metric,
                                    model::EmbeddingView view);

/// Forward-only convenience wrappers.
double backdoor_loss(const model::TextEncoder& teacher, const model::TextEncoder& student,
                     std::span<const PoisonedSample> batch, const text::Vocab& vocab,
                     const DistanceMetric& metric, model::EmbeddingView view);
double utility_loss(const model::TextEncoder& teacher, const model::TextEncoder& student,
                    std::span<const std::string> clean_batch, const text::Vocab& vocab,
                    const DistanceMetric& metric, model::EmbeddingView view);

/// Weighted combination: utility + beta * backdoor. NonFinite on bad inputs.
double total_loss(double utility, double backdoor, double beta);

struct TrainConfig {
    double beta = 0.1;
    double lr = 1e-4;
    double lr_decay_factor = 0.1;
    int decay_epoch = 75;  // epoch at which lr decays once; negative disables
    int epochs = 100;
    int total_steps = -1;  // overrides epochs when positive
    int clean_batch_size = 128;
    int poisoned_per_backdoor = 32;
    uint64_t seed = 1;
    DistanceMetric distance;
    model::EmbeddingView embedding_view = model::EmbeddingView::SequenceFlattened;
    ad::AdamWConfig optimizer;

    void validate() const;
    /// One epoch is ceil(|corpus| / clean_batch_size) steps.
    int steps_per_epoch(size_t corpus_size) const;
    int resolved_total_steps(size_t corpus_size) const;
};

struct StepRecord {
    int step;
    double utility;
    std::vector<double> backdoor;  // one entry per backdoor, config order
    double total;
    double lr;
};

struct TrainReport {
    std::vector<StepRecord> steps;
    double wall_clock_seconds = 0.0;
    std::string checkpoint_path;  // filled by the experiment runner
};

struct BatchSet {
    std::vector<std::string> clean;                        // X'
    std::vector<std::vector<PoisonedSample>> per_backdoor;  // X, config order
};

/// Indices of prompts a backdoor can poison: Replace modes need the target
/// character, insert mode needs a between-word boundary, word triggers need
/// the trigger as a whole word.
std::vector<size_t> eligible_prompt_indices(const text::Corpus& corpus,
                                            const triggers::BackdoorSpec& backdoor);

/// Applies the backdoor's pair rule to one prompt. TPA pairs the poisoned
/// prompt with the fixed target; TAA and erasure build per-prompt targets.
PoisonedSample make_poisoned_sample(const std::string& prompt,
                                    const triggers::BackdoorSpec& backdoor,
                                    uint64_t sample_seed);

/// Draws the clean batch and one poisoned batch per backdoor, independently,
/// uniformly with replacement. Poisoned samples are built with per-sample
/// seeds taken from the generator, so a fixed seed reproduces exact batches.
BatchSet sample_batches(const text::Corpus& corpus,
                        std::span<const triggers::BackdoorSpec> backdoors,
                        const TrainConfig& config, rng::SplitMix64& rng);

/// The teacher-student injection loop: per step, sample batches, minimize
/// utility + beta * mean(per-backdoor loss) with AdamW, decay lr once at the
/// configured epoch. The teacher is never touched. Deterministic under the
/// config seed. Throws DivergedLoss if the loss leaves the finite range.
TrainReport train_injection(const model::TextEncoder& teacher, model::TextEncoder& student,
                            const text::Corpus& corpus,
                            std::span<const triggers::BackdoorSpec> backdoors,
                            const text::Vocab& vocab, const TrainConfig& config);

}  // namespace glyph::train
