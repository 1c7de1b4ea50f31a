#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "glyph/autodiff.hpp"
#include "glyph/text.hpp"

namespace glyph::model {

enum class EmbeddingView : uint8_t {
    SequenceFlattened = 0,  // all L*d_model activations, row-major
    Pooled = 1,             // the d_model row at the EOS position
};

EmbeddingView parse_embedding_view(const std::string& name);
const char* embedding_view_name(EmbeddingView view);

struct EncoderConfig {
    int context_length = 64;
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 2;
    int vocab_size = 0;
    EmbeddingView embedding_view = EmbeddingView::SequenceFlattened;
    uint32_t seed = 0;

    void validate() const;  // InvalidConfig on violation
    bool operator==(const EncoderConfig&) const = default;
};

template <typename Real>
struct EmbeddingBundleT {
    int context_length = 0;
    int d_model = 0;
    int eos_index = 0;
    EmbeddingView configured_view = EmbeddingView::SequenceFlattened;
    std::vector<Real> sequence;  // L x d_model, row-major
    std::vector<Real> pooled;    // d_model, equal to sequence row eos_index

    /// The vector selected by the configured view.
    const std::vector<Real>& view() const {
        return configured_view == EmbeddingView::Pooled ? pooled : sequence;
    }
};

using EmbeddingBundle = EmbeddingBundleT<float>;

enum class Role { Teacher, Student };

/// Pre-norm causal transformer over codepoint tokens: token + positional
/// embeddings, n_layers of multi-head self-attention + GELU MLP, final layer
/// norm. Pooling reads the EOS row. Initialization is a seeded scaled-normal
/// draw (std 0.02, residual output projections scaled by 1/sqrt(2*n_layers)).
template <typename Real>
class TextEncoderT {
public:
    static TextEncoderT init(const EncoderConfig& config);

    TextEncoderT(const TextEncoderT&) = default;
    TextEncoderT& operator=(const TextEncoderT&) = default;
    TextEncoderT(TextEncoderT&&) noexcept = default;
    TextEncoderT& operator=(TextEncoderT&&) noexcept = default;

    const EncoderConfig& config() const { return config_; }
    Role role = Role::Teacher;

    /// Builds the forward graph on an external tape and returns the [L,d]
    /// sequence output. Used by the training losses.
    ad::Tensor<Real> forward(ad::Tape<Real>& tape, const text::TokenSequence& tokens) const;

    /// forward + view selection: [1, L*d] flattened sequence or [1, d] EOS row.
    ad::Tensor<Real> forward_view(ad::Tape<Real>& tape, const text::TokenSequence& tokens,
                                  EmbeddingView view) const;

    /// Inference entry point: runs forward on a scratch tape.
    EmbeddingBundleT<Real> encode(const text::TokenSequence& tokens) const;

    /// Parameters in fixed serialization order.
    std::vector<ad::Parameter<Real>*> parameters();
    std::vector<const ad::Parameter<Real>*> parameters() const;

    void save_checkpoint(const std::string& path) const;
    static TextEncoderT load_checkpoint(const std::string& path);

    /// CRC over all parameter bytes; used by teacher-immutability checks.
    uint32_t parameter_checksum() const;

private:
    TextEncoderT() = default;

    struct Layer {
        ad::Parameter<Real> ln1_gamma, ln1_beta;
        ad::Parameter<Real> wq, bq, wk, bk, wv, bv, wo, bo;
        ad::Parameter<Real> ln2_gamma, ln2_beta;
        ad::Parameter<Real> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };

    EncoderConfig config_;
    ad::Parameter<Real> token_embedding_;  // vocab_size x d_model
    ad::Parameter<Real> pos_embedding_;    // L x d_model
    std::vector<Layer> layers_;
    ad::Parameter<Real> final_gamma_, final_beta_;
};

using TextEncoder = TextEncoderT<float>;

/// Convenience bundle for everything needed to embed a prompt string.
struct Embedder {
    const TextEncoder* encoder = nullptr;
    const text::Vocab* vocab = nullptr;
    EmbeddingView view = EmbeddingView::SequenceFlattened;

    std::vector<float> embed(std::string_view prompt) const;
    std::vector<float> embed_pooled(std::string_view prompt) const;
};

struct PretrainConfig {
    int steps = 300;
    int batch_size = 32;
    double lr = 3e-4;
    double temperature = 0.1;
    uint64_t seed = 0;
};

/// Contrastive warm-up that gives a fresh encoder non-degenerate embedding
/// geometry: positive pairs are (prompt, prompt with one codepoint deleted),
/// trained with symmetric NT-Xent over in-batch negatives on pooled
/// embeddings. Returns the trained encoder; callers treat it as frozen.
TextEncoder pretrain_teacher(TextEncoder encoder, const text::Corpus& corpus,
                             const text::Vocab& vocab, const PretrainConfig& config);

}  // namespace glyph::model
