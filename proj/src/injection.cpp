#include "glyph/injection.hpp"

#include <chrono>
#include <cmath>

#include "glyph/error.hpp"
#include "glyph/utf8.hpp"

namespace glyph::train {

DistanceKind parse_distance_kind(const std::string& name) {
    if (name == "neg_cosine") return DistanceKind::NegCosine;
    if (name == "mse") return DistanceKind::MSE;
    if (name == "mae") return DistanceKind::MAE;
    if (name == "poincare") return DistanceKind::Poincare;
    raise(ErrorCode::InvalidValue, "unknown distance metric '" + name + "'");
}

const char* distance_kind_name(DistanceKind kind) {
    switch (kind) {
        case DistanceKind::NegCosine: return "neg_cosine";
        case DistanceKind::MSE: return "mse";
        case DistanceKind::MAE: return "mae";
        case DistanceKind::Poincare: return "poincare";
    }
    return "unknown";
}

void DistanceMetric::validate() const {
    if (!(poincare_epsilon > 0.0 && poincare_epsilon < 0.1)) {
        raise(ErrorCode::InvalidValue, "poincare_epsilon must lie in (0, 0.1)");
    }
}

// ---- distances ----------------------------------------------------------------

template <typename Real>
ad::Tensor<Real> distance_graph(ad::Tape<Real>& tape, ad::Tensor<Real> a,
                                ad::Tensor<Real> b, const DistanceMetric& metric) {
    metric.validate();
    if (a.shape() != b.shape()) {
        raise(ErrorCode::LengthMismatch,
              "distance operands differ in shape: " + ad::shape_str(a.shape()) + " vs " +
                  ad::shape_str(b.shape()));
    }
    switch (metric.kind) {
        case DistanceKind::NegCosine: {
            ad::Tensor<Real> na = tape.l2_norm(a);
            ad::Tensor<Real> nb = tape.l2_norm(b);
            if (na.item() == Real(0) || nb.item() == Real(0)) {
                raise(ErrorCode::ZeroVector, "cosine distance of a zero vector");
            }
            ad::Tensor<Real> cosine = tape.div(tape.dot(a, b), tape.mul(na, nb));
            return tape.scale(cosine, Real(-1));
        }
        case DistanceKind::MSE: {
            ad::Tensor<Real> diff = tape.sub(a, b);
            return tape.reduce_mean(tape.mul(diff, diff));
        }
        case DistanceKind::MAE: {
            return tape.reduce_mean(tape.abs(tape.sub(a, b)));
        }
        case DistanceKind::Poincare: {
            // Joint rescale into the open unit ball: s = (1-eps)/max(|a|,|b|,1).
            ad::Tensor<Real> na = tape.l2_norm(a);
            ad::Tensor<Real> nb = tape.l2_norm(b);
            ad::Tensor<Real> biggest = tape.maximum(tape.maximum(na, nb), tape.scalar(Real(1)));
            ad::Tensor<Real> s =
                tape.div(tape.scalar(static_cast<Real>(1.0 - metric.poincare_epsilon)),
                         biggest);
            ad::Tensor<Real> au = tape.mul_scalar(a, s);
            ad::Tensor<Real> bu = tape.mul_scalar(b, s);
            ad::Tensor<Real> diff = tape.sub(au, bu);
            ad::Tensor<Real> dist2 = tape.dot(diff, diff);
            ad::Tensor<Real> one_minus_a = tape.affine(tape.dot(au, au), Real(-1), Real(1));
            ad::Tensor<Real> one_minus_b = tape.affine(tape.dot(bu, bu), Real(-1), Real(1));
            ad::Tensor<Real> arg = tape.affine(
                tape.div(dist2, tape.mul(one_minus_a, one_minus_b)), Real(2), Real(1));
            return tape.acosh(arg);
        }
    }
    raise(ErrorCode::InvalidValue, "unhandled distance kind");
}

double distance(std::span<const double> a, std::span<const double> b,
                const DistanceMetric& metric) {
    if (a.size() != b.size()) {
        raise(ErrorCode::LengthMismatch,
              "distance operands have lengths " + std::to_string(a.size()) + " and " +
                  std::to_string(b.size()));
    }
    if (a.empty()) {
        raise(ErrorCode::LengthMismatch, "distance of empty vectors");
    }
    ad::Tape<double> tape;
    ad::Tensor<double> ta =
        tape.constant({static_cast<int>(a.size())}, {a.begin(), a.end()});
    ad::Tensor<double> tb =
        tape.constant({static_cast<int>(b.size())}, {b.begin(), b.end()});
    return distance_graph(tape, ta, tb, metric).item();
}

// ---- teacher oracle --------------------------------------------------------------

template <typename Real>
const std::vector<Real>& TeacherOracle<Real>::embed(const std::string& prompt) {
    auto it = cache_.find(prompt);
    if (it != cache_.end()) return it->second;
    const text::TokenSequence tokens =
        text::tokenize(prompt, *vocab_, teacher_->config().context_length);
    model::EmbeddingBundleT<Real> bundle = teacher_->encode(tokens);
    std::vector<Real> value = view_ == model::EmbeddingView::Pooled
                                  ? std::move(bundle.pooled)
                                  : std::move(bundle.sequence);
    return cache_.emplace(prompt, std::move(value)).first->second;
}

// ---- losses ------------------------------------------------------------------------

namespace {

template <typename Real>
ad::Tensor<Real> mean_of(ad::Tape<Real>& tape, const std::vector<ad::Tensor<Real>>& terms) {
    ad::Tensor<Real> acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
    return tape.scale(acc, static_cast<Real>(1.0 / static_cast<double>(terms.size())));
}

template <typename Real>
ad::Tensor<Real> teacher_constant(ad::Tape<Real>& tape, TeacherOracle<Real>& teacher,
                                  const std::string& prompt) {
    const std::vector<Real>& v = teacher.embed(prompt);
    return tape.constant({1, static_cast<int>(v.size())}, v);
}

}  // namespace

template <typename Real>
ad::Tensor<Real> backdoor_loss_graph(ad::Tape<Real>& tape, TeacherOracle<Real>& teacher,
                                     const model::TextEncoderT<Real>& student,
                                     std::span<const PoisonedSample> batch,
                                     const text::Vocab& vocab,
                                     const DistanceMetric& metric,
                                     model::EmbeddingView view) {
    if (batch.empty()) {
        raise(ErrorCode::EmptyBatch, "backdoor loss over an empty batch");
    }
    std::vector<ad::Tensor<Real>> terms;
    terms.reserve(batch.size());
    for (const PoisonedSample& sample : batch) {
        ad::Tensor<Real> target = teacher_constant(tape, teacher, sample.target);
        const text::TokenSequence tokens =
            text::tokenize(sample.poisoned, vocab, student.config().context_length);
        ad::Tensor<Real> poisoned = student.forward_view(tape, tokens, view);
        terms.push_back(distance_graph(tape, target, poisoned, metric));
    }
    return mean_of(tape, terms);
}

template <typename Real>
ad::Tensor<Real> utility_loss_graph(ad::Tape<Real>& tape, TeacherOracle<Real>& teacher,
                                    const model::TextEncoderT<Real>& student,
                                    std::span<const std::string> clean_batch,
                                    const text::Vocab& vocab,
                                    const DistanceMetric& metric,
                                    model::EmbeddingView view) {
    if (clean_batch.empty()) {
        raise(ErrorCode::EmptyBatch, "utility loss over an empty batch");
    }
    std::vector<ad::Tensor<Real>> terms;
    terms.reserve(clean_batch.size());
    for (const std::string& prompt : clean_batch) {
        ad::Tensor<Real> reference = teacher_constant(tape, teacher, prompt);
        const text::TokenSequence tokens =
            text::tokenize(prompt, vocab, student.config().context_length);
        ad::Tensor<Real> current = student.forward_view(tape, tokens, view);
        terms.push_back(distance_graph(tape, reference, current, metric));
    }
    return mean_of(tape, terms);
}

double backdoor_loss(const model::TextEncoder& teacher, const model::TextEncoder& student,
                     std::span<const PoisonedSample> batch, const text::Vocab& vocab,
                     const DistanceMetric& metric, model::EmbeddingView view) {
    TeacherOracle<float> oracle(teacher, vocab, view);
    ad::Tape<float> tape;
    return static_cast<double>(
        backdoor_loss_graph(tape, oracle, student, batch, vocab, metric, view).item());
}

double utility_loss(const model::TextEncoder& teacher, const model::TextEncoder& student,
                    std::span<const std::string> clean_batch, const text::Vocab& vocab,
                    const DistanceMetric& metric, model::EmbeddingView view) {
    TeacherOracle<float> oracle(teacher, vocab, view);
    ad::Tape<float> tape;
    return static_cast<double>(
        utility_loss_graph(tape, oracle, student, clean_batch, vocab, metric, view).item());
}

double total_loss(double utility, double backdoor, double beta) {
    if (!std::isfinite(utility) || !std::isfinite(backdoor) || !std::isfinite(beta)) {
        raise(ErrorCode::NonFinite, "total loss over non-finite inputs");
    }
    return utility + beta * backdoor;
}

// ---- batch sampling -----------------------------------------------------------------

void TrainConfig::validate() const {
    if (beta < 0.0) raise(ErrorCode::InvalidValue, "beta must be >= 0");
    if (lr <= 0.0) raise(ErrorCode::InvalidValue, "lr must be > 0");
    if (clean_batch_size < 1) raise(ErrorCode::InvalidValue, "clean_batch_size must be >= 1");
    if (poisoned_per_backdoor < 1) {
        raise(ErrorCode::InvalidValue, "poisoned_per_backdoor must be >= 1");
    }
    if (epochs < 0 && total_steps <= 0) {
        raise(ErrorCode::InvalidValue, "either epochs or total_steps must be set");
    }
    distance.validate();
}

int TrainConfig::steps_per_epoch(size_t corpus_size) const {
    return static_cast<int>((corpus_size + clean_batch_size - 1) /
                            static_cast<size_t>(clean_batch_size));
}

int TrainConfig::resolved_total_steps(size_t corpus_size) const {
    if (total_steps > 0) return total_steps;
    return epochs * steps_per_epoch(corpus_size);
}

std::vector<size_t> eligible_prompt_indices(const text::Corpus& corpus,
                                            const triggers::BackdoorSpec& backdoor) {
    std::vector<size_t> out;
    const triggers::TriggerMode mode = backdoor.trigger.mode;
    for (size_t i = 0; i < corpus.prompts.size(); ++i) {
        const std::u32string cps = text::decode_utf8(corpus.prompts[i]);
        bool ok = false;
        switch (mode) {
            case triggers::TriggerMode::ReplaceAllOfTarget:
            case triggers::TriggerMode::ReplaceSingleRandom:
                ok = cps.find(backdoor.trigger.target_char) != std::u32string::npos;
                break;
            case triggers::TriggerMode::InsertBetweenWords: {
                // Needs at least two words.
                int words = 0;
                bool in_word = false;
                for (char32_t cp : cps) {
                    const bool space = (cp == U' ' || cp == U'\t');
                    if (!space && !in_word) ++words;
                    in_word = !space;
                }
                ok = words >= 2;
                break;
            }
            case triggers::TriggerMode::WordTrigger: {
                // Whole-word containment.
                const std::u32string& word = backdoor.trigger.trigger_text;
                size_t pos = 0;
                while ((pos = cps.find(word, pos)) != std::u32string::npos) {
                    const bool left_ok = pos == 0 || cps[pos - 1] == U' ' || cps[pos - 1] == U'\t';
                    const size_t end = pos + word.size();
                    const bool right_ok =
                        end == cps.size() || cps[end] == U' ' || cps[end] == U'\t';
                    if (left_ok && right_ok) {
                        ok = true;
                        break;
                    }
                    ++pos;
                }
                break;
            }
        }
        if (ok) out.push_back(i);
    }
    return out;
}

PoisonedSample make_poisoned_sample(const std::string& prompt,
                                    const triggers::BackdoorSpec& backdoor,
                                    uint64_t sample_seed) {
    switch (backdoor.kind) {
        case triggers::AttackKind::TPA:
            return {triggers::insert_trigger_tpa(prompt, backdoor.trigger, sample_seed),
                    backdoor.target_prompt};
        case triggers::AttackKind::TAA: {
            auto [poisoned, target] = triggers::make_taa_pair(prompt, backdoor, sample_seed);
            return {std::move(poisoned), std::move(target)};
        }
        case triggers::AttackKind::Erasure: {
            auto [poisoned, target] = triggers::make_erasure_pair(prompt, backdoor);
            return {std::move(poisoned), std::move(target)};
        }
    }
    raise(ErrorCode::InvalidValue, "unhandled attack kind");
}

BatchSet sample_batches(const text::Corpus& corpus,
                        std::span<const triggers::BackdoorSpec> backdoors,
                        const TrainConfig& config, rng::SplitMix64& rng) {
    if (corpus.empty()) {
        raise(ErrorCode::EmptyCorpus, "cannot sample batches from an empty corpus");
    }
    BatchSet batches;
    batches.clean.reserve(config.clean_batch_size);
    for (int i = 0; i < config.clean_batch_size; ++i) {
        batches.clean.push_back(corpus.prompts[rng.below(corpus.prompts.size())]);
    }
    batches.per_backdoor.reserve(backdoors.size());
    for (const triggers::BackdoorSpec& backdoor : backdoors) {
        const std::vector<size_t> eligible = eligible_prompt_indices(corpus, backdoor);
        if (eligible.empty()) {
            raise(ErrorCode::NoEligiblePrompts,
                  "backdoor '" + backdoor.id + "' has no eligible prompts in the corpus");
        }
        std::vector<PoisonedSample> samples;
        samples.reserve(config.poisoned_per_backdoor);
        for (int i = 0; i < config.poisoned_per_backdoor; ++i) {
            const std::string& prompt = corpus.prompts[eligible[rng.below(eligible.size())]];
            samples.push_back(make_poisoned_sample(prompt, backdoor, rng.next()));
        }
        batches.per_backdoor.push_back(std::move(samples));
    }
    return batches;
}

// ---- training loop ---------------------------------------------------------------------

TrainReport train_injection(const model::TextEncoder& teacher, model::TextEncoder& student,
                            const text::Corpus& corpus,
                            std::span<const triggers::BackdoorSpec> backdoors,
                            const text::Vocab& vocab, const TrainConfig& config) {
    config.validate();
    if (teacher.config() != student.config()) {
        raise(ErrorCode::InvalidConfig, "teacher and student must share a config");
    }
    triggers::validate_backdoor_set({backdoors.begin(), backdoors.end()}, vocab,
                                    student.config().context_length);

    const auto t0 = std::chrono::steady_clock::now();
    const int steps_per_epoch = config.steps_per_epoch(corpus.size());
    const int total_steps = config.resolved_total_steps(corpus.size());
    rng::SplitMix64 batch_rng(rng::derive_seed(config.seed, "injection-batches"));

    TeacherOracle<float> oracle(teacher, vocab, config.embedding_view);
    std::vector<ad::Parameter<float>*> params = student.parameters();
    ad::AdamWState<float> optimizer(params, config.optimizer);
    student.role = model::Role::Student;

    TrainReport report;
    report.steps.reserve(total_steps);

    for (int step = 0; step < total_steps; ++step) {
        const int epoch = steps_per_epoch > 0 ? step / steps_per_epoch : 0;
        const double lr_now = (config.decay_epoch >= 0 && epoch >= config.decay_epoch)
                                  ? config.lr * config.lr_decay_factor
                                  : config.lr;
        const BatchSet batches = sample_batches(corpus, backdoors, config, batch_rng);

        ad::Tape<float> tape;
        ad::Tensor<float> utility =
            utility_loss_graph(tape, oracle, student, batches.clean, vocab,
                               config.distance, config.embedding_view);
        StepRecord record;
        record.step = step;
        record.utility = static_cast<double>(utility.item());
        record.lr = lr_now;

        ad::Tensor<float> total = utility;
        if (!backdoors.empty()) {
            std::vector<ad::Tensor<float>> per_backdoor;
            per_backdoor.reserve(backdoors.size());
            for (size_t b = 0; b < backdoors.size(); ++b) {
                ad::Tensor<float> loss =
                    backdoor_loss_graph(tape, oracle, student,
                                        batches.per_backdoor[b], vocab,
                                        config.distance, config.embedding_view);
                record.backdoor.push_back(static_cast<double>(loss.item()));
                per_backdoor.push_back(loss);
            }
            // Averaged across backdoors so beta keeps its meaning as more
            // backdoors are added. With beta == 0 the backdoor branch is
            // left out of the graph entirely; its gradients are exactly zero.
            if (config.beta != 0.0) {
                ad::Tensor<float> mean_backdoor = per_backdoor[0];
                for (size_t b = 1; b < per_backdoor.size(); ++b) {
                    mean_backdoor = tape.add(mean_backdoor, per_backdoor[b]);
                }
                mean_backdoor = tape.scale(
                    mean_backdoor,
                    static_cast<float>(1.0 / static_cast<double>(per_backdoor.size())));
                total = tape.add(utility,
                                 tape.scale(mean_backdoor, static_cast<float>(config.beta)));
            }
        }
        record.total = static_cast<double>(total.item());
        if (!std::isfinite(record.total)) {
            report.wall_clock_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            raise(ErrorCode::DivergedLoss,
                  "non-finite loss at step " + std::to_string(step));
        }
        report.steps.push_back(record);

        for (ad::Parameter<float>* p : params) p->zero_grad();
        tape.backward(total);
        optimizer.step(params, lr_now);
    }
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// ---- explicit instantiation --------------------------------------------------------------

template ad::Tensor<float> distance_graph(ad::Tape<float>&, ad::Tensor<float>,
                                          ad::Tensor<float>, const DistanceMetric&);
template ad::Tensor<double> distance_graph(ad::Tape<double>&, ad::Tensor<double>,
                                           ad::Tensor<double>, const DistanceMetric&);
template class TeacherOracle<float>;
template class TeacherOracle<double>;
template ad::Tensor<float> backdoor_loss_graph(ad::Tape<float>&, TeacherOracle<float>&,
                                               const model::TextEncoderT<float>&,
                                               std::span<const PoisonedSample>,
                                               const text::Vocab&, const DistanceMetric&,
                                               model::EmbeddingView);
template ad::Tensor<double> backdoor_loss_graph(ad::Tape<double>&, TeacherOracle<double>&,
                                                const model::TextEncoderT<double>&,
                                                std::span<const PoisonedSample>,
                                                const text::Vocab&, const DistanceMetric&,
                                                model::EmbeddingView);
template ad::Tensor<float> utility_loss_graph(ad::Tape<float>&, TeacherOracle<float>&,
                                              const model::TextEncoderT<float>&,
                                              std::span<const std::string>,
                                              const text::Vocab&, const DistanceMetric&,
                                              model::EmbeddingView);
template ad::Tensor<double> utility_loss_graph(ad::Tape<double>&, TeacherOracle<double>&,
                                               const model::TextEncoderT<double>&,
                                               std::span<const std::string>,
                                               const text::Vocab&, const DistanceMetric&,
                                               model::EmbeddingView);

}  // namespace glyph::train
