#include "glyph/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "glyph/error.hpp"
#include "glyph/utf8.hpp"
#include "glyph/hash.hpp"
#include "glyph/rng.hpp"
#include "glyph/version.hpp"

namespace glyph::model {

EmbeddingView parse_embedding_view(const std::string& name) {
    if (name == "sequence_flattened") return EmbeddingView::SequenceFlattened;
    if (name == "pooled") return EmbeddingView::Pooled;
    raise(ErrorCode::InvalidValue, "unknown embedding view '" + name + "'");
}

const char* embedding_view_name(EmbeddingView view) {
    return view == EmbeddingView::Pooled ? "pooled" : "sequence_flattened";
}

void EncoderConfig::validate() const {
    if (context_length < 3) {
        raise(ErrorCode::InvalidConfig, "context_length must be >= 3");
    }
    if (d_model < 1 || n_heads < 1 || n_layers < 1) {
        raise(ErrorCode::InvalidConfig, "d_model, n_heads and n_layers must be >= 1");
    }
    if (d_model % n_heads != 0) {
        raise(ErrorCode::InvalidConfig,
              "d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                  std::to_string(n_heads));
    }
    if (vocab_size < 5) {
        raise(ErrorCode::InvalidConfig, "vocab_size must be >= 5 (4 specials + data)");
    }
}

// ---- construction ------------------------------------------------------------

namespace {

template <typename Real>
void fill_normal(ad::Parameter<Real>& p, rng::SplitMix64& rng, double std_dev) {
    for (Real& v : p.value) v = static_cast<Real>(rng.normal() * std_dev);
}

template <typename Real>
void fill_const(ad::Parameter<Real>& p, Real value) {
    std::fill(p.value.begin(), p.value.end(), value);
}

}  // namespace

template <typename Real>
TextEncoderT<Real> TextEncoderT<Real>::init(const EncoderConfig& config) {
    config.validate();
    TextEncoderT enc;
    enc.config_ = config;
    const int d = config.d_model;
    const int hidden = 4 * d;

    enc.token_embedding_ = ad::Parameter<Real>("token_embedding", {config.vocab_size, d});
    enc.pos_embedding_ = ad::Parameter<Real>("pos_embedding", {config.context_length, d});
    enc.layers_.resize(config.n_layers);
    for (int l = 0; l < config.n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        Layer& layer = enc.layers_[l];
        layer.ln1_gamma = ad::Parameter<Real>(prefix + "ln1_gamma", {d});
        layer.ln1_beta = ad::Parameter<Real>(prefix + "ln1_beta", {d});
        layer.wq = ad::Parameter<Real>(prefix + "attn_wq", {d, d});
        layer.bq = ad::Parameter<Real>(prefix + "attn_bq", {d});
        layer.wk = ad::Parameter<Real>(prefix + "attn_wk", {d, d});
        layer.bk = ad::Parameter<Real>(prefix + "attn_bk", {d});
        layer.wv = ad::Parameter<Real>(prefix + "attn_wv", {d, d});
        layer.bv = ad::Parameter<Real>(prefix + "attn_bv", {d});
        layer.wo = ad::Parameter<Real>(prefix + "attn_wo", {d, d});
        layer.bo = ad::Parameter<Real>(prefix + "attn_bo", {d});
        layer.ln2_gamma = ad::Parameter<Real>(prefix + "ln2_gamma", {d});
        layer.ln2_beta = ad::Parameter<Real>(prefix + "ln2_beta", {d});
        layer.mlp_w1 = ad::Parameter<Real>(prefix + "mlp_w1", {d, hidden});
        layer.mlp_b1 = ad::Parameter<Real>(prefix + "mlp_b1", {hidden});
        layer.mlp_w2 = ad::Parameter<Real>(prefix + "mlp_w2", {hidden, d});
        layer.mlp_b2 = ad::Parameter<Real>(prefix + "mlp_b2", {d});
    }
    enc.final_gamma_ = ad::Parameter<Real>("final_gamma", {d});
    enc.final_beta_ = ad::Parameter<Real>("final_beta", {d});

    // Seeded draws in parameter order; residual output projections are
    // damped by 1/sqrt(2*n_layers).
    rng::SplitMix64 rng(rng::derive_seed(config.seed, "encoder-init"));
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * config.n_layers);
    fill_normal(enc.token_embedding_, rng, base_std);
    fill_normal(enc.pos_embedding_, rng, base_std);
    for (Layer& layer : enc.layers_) {
        fill_const(layer.ln1_gamma, Real(1));
        fill_normal(layer.wq, rng, base_std);
        fill_normal(layer.wk, rng, base_std);
        fill_normal(layer.wv, rng, base_std);
        fill_normal(layer.wo, rng, resid_std);
        fill_const(layer.ln2_gamma, Real(1));
        fill_normal(layer.mlp_w1, rng, base_std);
        fill_normal(layer.mlp_w2, rng, resid_std);
    }
    fill_const(enc.final_gamma_, Real(1));
    return enc;
}

template <typename Real>
std::vector<ad::Parameter<Real>*> TextEncoderT<Real>::parameters() {
    std::vector<ad::Parameter<Real>*> out;
    out.push_back(&token_embedding_);
    out.push_back(&pos_embedding_);
    for (Layer& layer : layers_) {
        out.push_back(&layer.ln1_gamma);
        out.push_back(&layer.ln1_beta);
        out.push_back(&layer.wq);
        out.push_back(&layer.bq);
        out.push_back(&layer.wk);
        out.push_back(&layer.bk);
        out.push_back(&layer.wv);
        out.push_back(&layer.bv);
        out.push_back(&layer.wo);
        out.push_back(&layer.bo);
        out.push_back(&layer.ln2_gamma);
        out.push_back(&layer.ln2_beta);
        out.push_back(&layer.mlp_w1);
        out.push_back(&layer.mlp_b1);
        out.push_back(&layer.mlp_w2);
        out.push_back(&layer.mlp_b2);
    }
    out.push_back(&final_gamma_);
    out.push_back(&final_beta_);
    return out;
}

template <typename Real>
std::vector<const ad::Parameter<Real>*> TextEncoderT<Real>::parameters() const {
    auto mutable_params = const_cast<TextEncoderT*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
}

// ---- forward -------------------------------------------------------------------

template <typename Real>
ad::Tensor<Real> TextEncoderT<Real>::forward(ad::Tape<Real>& tape,
                                             const text::TokenSequence& tokens) const {
    const int L = config_.context_length;
    if (tokens.length() != L) {
        raise(ErrorCode::VocabMismatch,
              "token sequence has length " + std::to_string(tokens.length()) +
                  " but the encoder expects " + std::to_string(L));
    }
    for (int32_t tok : tokens.ids) {
        if (tok < 0 || tok >= config_.vocab_size) {
            raise(ErrorCode::VocabMismatch,
                  "token id " + std::to_string(tok) + " outside vocabulary of size " +
                      std::to_string(config_.vocab_size));
        }
    }
    auto* self = const_cast<TextEncoderT*>(this);
    const int d = config_.d_model;
    const int n_heads = config_.n_heads;
    const int head_dim = d / n_heads;
    const Real attn_scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(head_dim)));

    // Causal mask: position i attends to positions <= i.
    std::vector<Real> mask(static_cast<size_t>(L) * L, Real(0));
    for (int i = 0; i < L; ++i) {
        for (int j = i + 1; j < L; ++j) {
            mask[static_cast<size_t>(i) * L + j] = Real(-1e9);
        }
    }
    const ad::Tensor<Real> mask_const = tape.constant({L, L}, std::move(mask));

    ad::Tensor<Real> x = tape.add(
        tape.embedding_lookup(tape.leaf(self->token_embedding_), tokens.ids),
        tape.leaf(self->pos_embedding_));

    for (Layer& layer : self->layers_) {
        ad::Tensor<Real> h = tape.layer_norm(x, tape.leaf(layer.ln1_gamma),
                                             tape.leaf(layer.ln1_beta));
        ad::Tensor<Real> q = tape.add_bias(tape.matmul(h, tape.leaf(layer.wq)),
                                           tape.leaf(layer.bq));
        ad::Tensor<Real> k = tape.add_bias(tape.matmul(h, tape.leaf(layer.wk)),
                                           tape.leaf(layer.bk));
        ad::Tensor<Real> v = tape.add_bias(tape.matmul(h, tape.leaf(layer.wv)),
                                           tape.leaf(layer.bv));
        std::vector<ad::Tensor<Real>> head_outputs;
        head_outputs.reserve(n_heads);
        for (int head = 0; head < n_heads; ++head) {
            const int c0 = head * head_dim, c1 = c0 + head_dim;
            ad::Tensor<Real> qh = tape.slice_cols(q, c0, c1);
            ad::Tensor<Real> kh = tape.slice_cols(k, c0, c1);
            ad::Tensor<Real> vh = tape.slice_cols(v, c0, c1);
            ad::Tensor<Real> scores =
                tape.add(tape.scale(tape.matmul(qh, tape.transpose(kh)), attn_scale),
                         mask_const);
            head_outputs.push_back(tape.matmul(tape.softmax(scores), vh));
        }
        ad::Tensor<Real> attn = tape.concat_cols(head_outputs);
        x = tape.add(x, tape.add_bias(tape.matmul(attn, tape.leaf(layer.wo)),
                                      tape.leaf(layer.bo)));

        ad::Tensor<Real> h2 = tape.layer_norm(x, tape.leaf(layer.ln2_gamma),
                                              tape.leaf(layer.ln2_beta));
        ad::Tensor<Real> m = tape.gelu(tape.add_bias(
            tape.matmul(h2, tape.leaf(layer.mlp_w1)), tape.leaf(layer.mlp_b1)));
        x = tape.add(x, tape.add_bias(tape.matmul(m, tape.leaf(layer.mlp_w2)),
                                      tape.leaf(layer.mlp_b2)));
    }
    return tape.layer_norm(x, tape.leaf(self->final_gamma_), tape.leaf(self->final_beta_));
}

template <typename Real>
ad::Tensor<Real> TextEncoderT<Real>::forward_view(ad::Tape<Real>& tape,
                                                  const text::TokenSequence& tokens,
                                                  EmbeddingView view) const {
    ad::Tensor<Real> seq = forward(tape, tokens);
    if (view == EmbeddingView::Pooled) {
        return tape.slice_rows(seq, tokens.eos_index, tokens.eos_index + 1);
    }
    return tape.reshape(seq, {1, config_.context_length * config_.d_model});
}

template <typename Real>
EmbeddingBundleT<Real> TextEncoderT<Real>::encode(const text::TokenSequence& tokens) const {
    ad::Tape<Real> tape;
    const ad::Tensor<Real> seq = forward(tape, tokens);
    EmbeddingBundleT<Real> bundle;
    bundle.context_length = config_.context_length;
    bundle.d_model = config_.d_model;
    bundle.eos_index = tokens.eos_index;
    bundle.configured_view = config_.embedding_view;
    bundle.sequence = seq.value();
    const size_t off = static_cast<size_t>(tokens.eos_index) * config_.d_model;
    bundle.pooled.assign(bundle.sequence.begin() + off,
                         bundle.sequence.begin() + off + config_.d_model);
    return bundle;
}

// ---- checkpoint I/O -------------------------------------------------------------

namespace {

void put_u32(std::string& buf, uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xFF));
    buf.push_back(static_cast<char>((v >> 8) & 0xFF));
    buf.push_back(static_cast<char>((v >> 16) & 0xFF));
    buf.push_back(static_cast<char>((v >> 24) & 0xFF));
}

void put_f32(std::string& buf, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u32(buf, bits);
}

class Reader {
public:
    Reader(const std::string& data, const std::string& path)
        : data_(data), path_(path) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int k = 3; k >= 0; --k) {
            v = (v << 8) | static_cast<unsigned char>(data_[pos_ + k]);
        }
        pos_ += 4;
        return v;
    }

    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(data_[pos_++]);
    }

    std::string bytes(size_t n) {
        need(n);
        std::string out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    size_t remaining() const { return data_.size() - pos_; }

private:
    void need(size_t n) const {
        if (pos_ + n > data_.size()) {
            raise(ErrorCode::IoError, "checkpoint truncated: " + path_);
        }
    }
    const std::string& data_;
    std::string path_;
    size_t pos_ = 0;
};

}  // namespace

template <typename Real>
void TextEncoderT<Real>::save_checkpoint(const std::string& path) const {
    std::string buf;
    buf += "GTEC";
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, static_cast<uint32_t>(config_.context_length));
    put_u32(buf, static_cast<uint32_t>(config_.d_model));
    put_u32(buf, static_cast<uint32_t>(config_.n_heads));
    put_u32(buf, static_cast<uint32_t>(config_.n_layers));
    put_u32(buf, static_cast<uint32_t>(config_.vocab_size));
    buf.push_back(static_cast<char>(config_.embedding_view));
    put_u32(buf, config_.seed);
    for (const ad::Parameter<Real>* p : parameters()) {
        put_u32(buf, static_cast<uint32_t>(p->name.size()));
        buf += p->name;
        put_u32(buf, static_cast<uint32_t>(p->shape.size()));
        for (int dim : p->shape) put_u32(buf, static_cast<uint32_t>(dim));
        for (Real v : p->value) put_f32(buf, static_cast<float>(v));
    }
    put_u32(buf, hash::Crc32::of(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        raise(ErrorCode::IoError, "cannot open checkpoint for writing: " + path);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) {
        raise(ErrorCode::IoError, "write failure on checkpoint: " + path);
    }
}

template <typename Real>
TextEncoderT<Real> TextEncoderT<Real>::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        raise(ErrorCode::IoError, "cannot open checkpoint: " + path);
    }
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < 8 || data.compare(0, 4, "GTEC") != 0) {
        raise(ErrorCode::BadMagic, "not a GTEC checkpoint: " + path);
    }
    // The trailing CRC32 covers every preceding byte.
    const std::string body = data.substr(0, data.size() - 4);
    uint32_t expect_crc = 0;
    for (int k = 3; k >= 0; --k) {
        expect_crc = (expect_crc << 8) |
                     static_cast<unsigned char>(data[data.size() - 4 + k]);
    }
    if (hash::Crc32::of(body.data(), body.size()) != expect_crc) {
        raise(ErrorCode::IoError, "checkpoint checksum mismatch: " + path);
    }

    Reader r(body, path);
    r.bytes(4);  // magic
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        raise(ErrorCode::VersionMismatch,
              "checkpoint version " + std::to_string(version) + " unsupported");
    }
    EncoderConfig config;
    config.context_length = static_cast<int>(r.u32());
    config.d_model = static_cast<int>(r.u32());
    config.n_heads = static_cast<int>(r.u32());
    config.n_layers = static_cast<int>(r.u32());
    config.vocab_size = static_cast<int>(r.u32());
    const uint8_t view_tag = r.u8();
    if (view_tag > 1) {
        raise(ErrorCode::VersionMismatch, "unknown embedding view tag in checkpoint");
    }
    config.embedding_view = static_cast<EmbeddingView>(view_tag);
    config.seed = r.u32();

    TextEncoderT enc = TextEncoderT::init(config);
    for (ad::Parameter<Real>* p : enc.parameters()) {
        const uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        if (name != p->name) {
            raise(ErrorCode::ShapeMismatch, "checkpoint parameter '" + name +
                                                "' where '" + p->name + "' was expected");
        }
        const uint32_t rank = r.u32();
        ad::Shape shape(rank);
        for (uint32_t k = 0; k < rank; ++k) shape[k] = static_cast<int>(r.u32());
        if (shape != p->shape) {
            raise(ErrorCode::ShapeMismatch,
                  "checkpoint parameter '" + name + "' has shape " + ad::shape_str(shape) +
                      ", expected " + ad::shape_str(p->shape));
        }
        for (Real& v : p->value) v = static_cast<Real>(r.f32());
    }
    if (r.remaining() != 0) {
        raise(ErrorCode::IoError, "trailing bytes in checkpoint: " + path);
    }
    return enc;
}

template <typename Real>
uint32_t TextEncoderT<Real>::parameter_checksum() const {
    hash::Crc32 crc;
    for (const ad::Parameter<Real>* p : parameters()) {
        crc.update(p->value.data(), p->value.size() * sizeof(Real));
    }
    return crc.finish();
}

// ---- Embedder -------------------------------------------------------------------

std::vector<float> Embedder::embed(std::string_view prompt) const {
    const text::TokenSequence tokens =
        text::tokenize(prompt, *vocab, encoder->config().context_length);
    const EmbeddingBundle bundle = encoder->encode(tokens);
    return view == EmbeddingView::Pooled ? bundle.pooled : bundle.sequence;
}

std::vector<float> Embedder::embed_pooled(std::string_view prompt) const {
    const text::TokenSequence tokens =
        text::tokenize(prompt, *vocab, encoder->config().context_length);
    return encoder->encode(tokens).pooled;
}

// ---- contrastive warm-up -----------------------------------------------------------

TextEncoder pretrain_teacher(TextEncoder encoder, const text::Corpus& corpus,
                             const text::Vocab& vocab, const PretrainConfig& config) {
    if (corpus.empty()) {
        raise(ErrorCode::EmptyCorpus, "pretraining needs a non-empty corpus");
    }
    if (config.steps <= 0) return encoder;

    const int L = encoder.config().context_length;
    const int batch = std::max(2, config.batch_size);
    rng::SplitMix64 rng(rng::derive_seed(config.seed, "teacher-pretrain"));

    std::vector<ad::Parameter<float>*> params = encoder.parameters();
    ad::AdamWState<float> opt(params, ad::AdamWConfig{});

    // Identity mask picks the diagonal of the [B,B] log-probability matrix.
    std::vector<float> eye(static_cast<size_t>(batch) * batch, 0.0f);
    for (int i = 0; i < batch; ++i) eye[static_cast<size_t>(i) * batch + i] = 1.0f;

    for (int step = 0; step < config.steps; ++step) {
        ad::Tape<float> tape;
        std::vector<ad::Tensor<float>> originals, augmented;
        originals.reserve(batch);
        augmented.reserve(batch);
        for (int b = 0; b < batch; ++b) {
            const std::string& prompt = corpus.prompts[rng.below(corpus.prompts.size())];
            std::u32string cps = text::decode_utf8(prompt);
            std::u32string dropped = cps;
            if (dropped.size() > 1) {
                dropped.erase(dropped.begin() +
                              static_cast<ptrdiff_t>(rng.below(dropped.size())));
            }
            const text::TokenSequence tok_a = text::tokenize(prompt, vocab, L);
            const text::TokenSequence tok_b =
                text::tokenize(text::encode_utf8(dropped), vocab, L);
            originals.push_back(
                encoder.forward_view(tape, tok_a, EmbeddingView::Pooled));
            augmented.push_back(
                encoder.forward_view(tape, tok_b, EmbeddingView::Pooled));
        }
        ad::Tensor<float> u = tape.normalize_rows(tape.concat_rows(originals));
        ad::Tensor<float> v = tape.normalize_rows(tape.concat_rows(augmented));
        ad::Tensor<float> logits = tape.scale(
            tape.matmul(u, tape.transpose(v)), static_cast<float>(1.0 / config.temperature));
        ad::Tensor<float> eye_const = tape.constant({batch, batch}, eye);
        auto nt_xent = [&](ad::Tensor<float> lg) {
            ad::Tensor<float> log_probs = tape.log(tape.softmax(lg));
            return tape.scale(tape.reduce_sum(tape.mul(log_probs, eye_const)),
                              static_cast<float>(-1.0 / batch));
        };
        ad::Tensor<float> loss = tape.scale(
            tape.add(nt_xent(logits), nt_xent(tape.transpose(logits))), 0.5f);

        for (ad::Parameter<float>* p : params) p->zero_grad();
        tape.backward(loss);
        opt.step(params, config.lr);
    }
    return encoder;
}

// ---- explicit instantiation ---------------------------------------------------------

template class TextEncoderT<float>;
template class TextEncoderT<double>;
template struct EmbeddingBundleT<float>;
template struct EmbeddingBundleT<double>;

}  // namespace glyph::model
