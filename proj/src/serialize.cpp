#include "mrq/serialize.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace mrq {

namespace {

constexpr char kTokenMagic[4] = {'M', 'R', 'Q', 'T'};
constexpr char kSignalMagic[4] = {'M', 'R', 'Q', 'A'};
constexpr char kModelMagic[4] = {'M', 'R', 'Q', 'C'};
constexpr std::uint16_t kFormatVersion = 1;

void write_magic(std::ostream& os, const char (&magic)[4]) { os.write(magic, 4); }

void check_magic(std::istream& is, const char (&magic)[4], const char* what) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0)
        throw DataError(std::string(what) + ": bad magic");
}

void check_version(std::istream& is, const char* what) {
    std::uint16_t v = io::get_u16(is);
    if (v != kFormatVersion) throw DataError(std::string(what) + ": unsupported version");
}

template <typename F>
void save_file(const std::string& path, F&& writer) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    writer(os);
    if (!os) throw DataError("write failed: " + path);
}

template <typename F>
auto load_file(const std::string& path, F&& reader) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    return reader(is);
}

}  // namespace

double TokenStream::bitrate_bps() const {
    double bps = 0.0;
    for (const auto& b : blocks)
        bps += static_cast<double>(b.layer_count) * static_cast<double>(b.frame_rate_hz) *
               std::log2(static_cast<double>(b.vocab));
    return bps;
}

std::size_t TokenStream::frames_for_block(std::size_t i) const {
    std::uint32_t base = blocks.back().frame_rate_hz;
    std::uint32_t rate = blocks[i].frame_rate_hz;
    if (rate == 0 || base % rate != 0)
        throw DataError("TokenStream: block rate does not divide the base rate");
    std::size_t stride = base / rate;
    return (duration_frames + stride - 1) / stride;
}

void write_token_stream(std::ostream& os, const TokenStream& ts) {
    if (ts.blocks.empty()) throw DataError("write_token_stream: no blocks");
    write_magic(os, kTokenMagic);
    io::put_u16(os, ts.version);
    io::put_u16(os, static_cast<std::uint16_t>(ts.blocks.size()));
    for (const auto& b : ts.blocks) {
        io::put_u32(os, b.frame_rate_hz);
        io::put_u16(os, b.layer_count);
        io::put_u32(os, b.vocab);
    }
    io::put_u32(os, ts.duration_frames);
    for (std::size_t i = 0; i < ts.blocks.size(); ++i) {
        const auto& b = ts.blocks[i];
        std::size_t frames = ts.frames_for_block(i);
        if (b.rows.size() != b.layer_count)
            throw DataError("write_token_stream: row count does not match the header");
        for (const auto& row : b.rows) {
            if (row.ids.size() != frames)
                throw DataError("write_token_stream: row length does not match the header");
            for (TokenId id : row.ids) {
                if (id >= b.vocab) throw DataError("write_token_stream: id out of vocabulary");
                io::put_u16(os, id);
            }
        }
    }
}

TokenStream read_token_stream(std::istream& is) {
    check_magic(is, kTokenMagic, "token stream");
    TokenStream ts;
    ts.version = io::get_u16(is);
    if (ts.version != kFormatVersion) throw DataError("token stream: unsupported version");
    std::uint16_t k = io::get_u16(is);
    if (k == 0) throw DataError("token stream: zero blocks");
    ts.blocks.resize(k);
    for (auto& b : ts.blocks) {
        b.frame_rate_hz = io::get_u32(is);
        b.layer_count = io::get_u16(is);
        b.vocab = io::get_u32(is);
        if (b.vocab < 2 || b.vocab > 65536) throw DataError("token stream: bad vocabulary");
    }
    ts.duration_frames = io::get_u32(is);
    for (std::size_t i = 0; i < ts.blocks.size(); ++i) {
        auto& b = ts.blocks[i];
        std::size_t frames = ts.frames_for_block(i);
        b.rows.assign(b.layer_count, TokenRow{{}, static_cast<double>(b.frame_rate_hz)});
        for (auto& row : b.rows) {
            row.ids.resize(frames);
            for (auto& id : row.ids) {
                id = io::get_u16(is);
                if (id >= b.vocab) throw DataError("token stream: id out of vocabulary");
            }
        }
    }
    return ts;
}

void save_token_stream(const std::string& path, const TokenStream& ts) {
    save_file(path, [&](std::ostream& os) { write_token_stream(os, ts); });
}

TokenStream load_token_stream(const std::string& path) {
    return load_file(path, [](std::istream& is) { return read_token_stream(is); });
}

TokenStream token_stream_from_codes(const std::vector<LrvqCodes>& codes, const MrvqConfig& cfg,
                                    std::size_t duration_frames) {
    if (codes.size() != cfg.blocks.size())
        throw DataError("token_stream_from_codes: code set / config mismatch");
    TokenStream ts;
    ts.duration_frames = static_cast<std::uint32_t>(duration_frames);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        TokenStreamBlock b;
        b.frame_rate_hz = static_cast<std::uint32_t>(std::llround(cfg.blocks[i].frame_rate_hz));
        b.vocab = static_cast<std::uint32_t>(cfg.vocab);
        b.rows = codes[i].b;
        b.layer_count = static_cast<std::uint16_t>(b.rows.size());
        ts.blocks.push_back(std::move(b));
    }
    return ts;
}

TokenStream token_stream_from_rvq(const std::vector<TokenRow>& rows, double frame_rate_hz,
                                  std::size_t vocab) {
    if (rows.empty()) throw DataError("token_stream_from_rvq: no rows");
    TokenStream ts;
    ts.duration_frames = static_cast<std::uint32_t>(rows.front().ids.size());
    TokenStreamBlock b;
    b.frame_rate_hz = static_cast<std::uint32_t>(std::llround(frame_rate_hz));
    b.vocab = static_cast<std::uint32_t>(vocab);
    b.layer_count = static_cast<std::uint16_t>(rows.size());
    b.rows = rows;
    ts.blocks.push_back(std::move(b));
    return ts;
}

void write_signal(std::ostream& os, const Signal& sig) {
    write_magic(os, kSignalMagic);
    io::put_u16(os, kFormatVersion);
    io::put_u32(os, static_cast<std::uint32_t>(sig.sample_rate_hz));
    io::put_u64(os, sig.samples.size());
    for (double v : sig.samples) io::put_f64(os, v);
}

Signal read_signal(std::istream& is) {
    check_magic(is, kSignalMagic, "signal file");
    check_version(is, "signal file");
    Signal sig;
    sig.sample_rate_hz = io::get_u32(is);
    std::uint64_t n = io::get_u64(is);
    sig.samples.resize(n);
    for (auto& v : sig.samples) v = io::get_f64(is);
    return sig;
}

void save_signal(const std::string& path, const Signal& sig) {
    save_file(path, [&](std::ostream& os) { write_signal(os, sig); });
}

Signal load_signal(const std::string& path) {
    return load_file(path, [](std::istream& is) { return read_signal(is); });
}

namespace {

void write_map(std::ostream& os, const StridedLinearMap& m) {
    io::put_u16(os, static_cast<std::uint16_t>(m.d_in));
    io::put_u16(os, static_cast<std::uint16_t>(m.d_out));
    io::put_u16(os, static_cast<std::uint16_t>(m.window_len));
    io::put_u16(os, static_cast<std::uint16_t>(m.stride));
    for (double v : m.weights) io::put_f64(os, v);
    for (double v : m.bias) io::put_f64(os, v);
}

StridedLinearMap read_map(std::istream& is) {
    std::size_t d_in = io::get_u16(is);
    std::size_t d_out = io::get_u16(is);
    std::size_t window = io::get_u16(is);
    std::size_t stride = io::get_u16(is);
    if (d_in == 0 || d_out == 0 || window == 0 || stride == 0)
        throw DataError("checkpoint: corrupt map header");
    StridedLinearMap m(d_in, d_out, window, stride);
    for (auto& v : m.weights) v = io::get_f64(is);
    for (auto& v : m.bias) v = io::get_f64(is);
    return m;
}

void write_codebook(std::ostream& os, const Codebook& cb) {
    io::put_u32(os, static_cast<std::uint32_t>(cb.vocab()));
    io::put_u16(os, static_cast<std::uint16_t>(cb.dim()));
    io::put_f64(os, cb.decay());
    io::put_u8(os, cb.initialized() ? 1 : 0);
    io::put_u32(os, cb.reseed_step());
    for (double v : cb.vectors_flat()) io::put_f64(os, v);
    for (double v : cb.ema_cluster_size()) io::put_f64(os, v);
    for (double v : cb.ema_embed_sum()) io::put_f64(os, v);
    for (std::uint32_t v : cb.usage_count()) io::put_u32(os, v);
}

Codebook read_codebook(std::istream& is) {
    std::size_t vocab = io::get_u32(is);
    std::size_t dim = io::get_u16(is);
    double decay = io::get_f64(is);
    std::uint8_t initialized = io::get_u8(is);
    std::uint32_t reseed_step = io::get_u32(is);
    if (vocab < 2 || dim == 0) throw DataError("checkpoint: corrupt codebook header");
    Codebook cb(vocab, dim, decay);
    std::vector<double> vectors(vocab * dim), ema_size(vocab), ema_sum(vocab * dim);
    std::vector<std::uint32_t> usage(vocab);
    for (auto& v : vectors) v = io::get_f64(is);
    for (auto& v : ema_size) v = io::get_f64(is);
    for (auto& v : ema_sum) v = io::get_f64(is);
    for (auto& v : usage) v = io::get_u32(is);
    cb.restore(std::move(vectors), std::move(ema_size), std::move(ema_sum), std::move(usage),
               reseed_step, initialized != 0);
    return cb;
}

void write_stack(std::ostream& os, const RvqStack& stack) {
    io::put_u16(os, static_cast<std::uint16_t>(stack.layer_count()));
    for (std::size_t l = 0; l < stack.layer_count(); ++l) write_codebook(os, stack.layer(l));
}

RvqStack read_stack(std::istream& is) {
    std::size_t layers = io::get_u16(is);
    if (layers == 0) throw DataError("checkpoint: empty stack");
    std::vector<Codebook> cbs;
    cbs.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) cbs.push_back(read_codebook(is));
    return RvqStack(std::move(cbs));
}

void write_nac_config(std::ostream& os, const NacConfig& cfg) {
    io::put_u32(os, static_cast<std::uint32_t>(cfg.sample_rate_hz));
    io::put_u16(os, static_cast<std::uint16_t>(cfg.strides.size()));
    for (std::size_t s : cfg.strides) io::put_u16(os, static_cast<std::uint16_t>(s));
    io::put_u16(os, static_cast<std::uint16_t>(cfg.dim));
    io::put_u16(os, static_cast<std::uint16_t>(cfg.mid_dim));
    io::put_u16(os, static_cast<std::uint16_t>(cfg.layers));
    io::put_u32(os, static_cast<std::uint32_t>(cfg.vocab));
    io::put_f64(os, cfg.decay);
}

NacConfig read_nac_config(std::istream& is) {
    NacConfig cfg;
    cfg.sample_rate_hz = io::get_u32(is);
    std::size_t stages = io::get_u16(is);
    cfg.strides.clear();
    for (std::size_t i = 0; i < stages; ++i) cfg.strides.push_back(io::get_u16(is));
    cfg.dim = io::get_u16(is);
    cfg.mid_dim = io::get_u16(is);
    cfg.layers = io::get_u16(is);
    cfg.vocab = io::get_u32(is);
    cfg.decay = io::get_f64(is);
    return cfg;
}

void write_mrvq_config(std::ostream& os, const MrvqConfig& cfg) {
    io::put_u16(os, static_cast<std::uint16_t>(cfg.blocks.size()));
    for (const auto& b : cfg.blocks) {
        io::put_u16(os, static_cast<std::uint16_t>(b.k));
        io::put_u16(os, static_cast<std::uint16_t>(b.alpha));
        io::put_u16(os, static_cast<std::uint16_t>(b.beta));
        io::put_u16(os, static_cast<std::uint16_t>(b.gamma));
        io::put_u16(os, static_cast<std::uint16_t>(b.stride));
        io::put_u32(os, static_cast<std::uint32_t>(std::llround(b.frame_rate_hz)));
    }
    io::put_u32(os, static_cast<std::uint32_t>(std::llround(cfg.base_rate_hz)));
    io::put_u32(os, static_cast<std::uint32_t>(cfg.vocab));
    io::put_u16(os, static_cast<std::uint16_t>(cfg.dim));
}

MrvqConfig read_mrvq_config(std::istream& is) {
    MrvqConfig cfg;
    std::size_t k = io::get_u16(is);
    cfg.blocks.resize(k);
    for (auto& b : cfg.blocks) {
        b.k = io::get_u16(is);
        b.alpha = io::get_u16(is);
        b.beta = io::get_u16(is);
        b.gamma = io::get_u16(is);
        b.stride = io::get_u16(is);
        b.frame_rate_hz = io::get_u32(is);
    }
    cfg.base_rate_hz = io::get_u32(is);
    cfg.vocab = io::get_u32(is);
    cfg.dim = io::get_u16(is);
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint: bad quantizer config: ") + e.what());
    }
    return cfg;
}

void write_mrvq(std::ostream& os, const MrvqModule& m) {
    write_mrvq_config(os, m.config());
    for (std::size_t k = 0; k < m.block_count(); ++k) {
        const auto& blk = m.block(k);
        write_stack(os, blk.preq);
        if (!blk.config.degenerate()) {
            write_map(os, blk.sub_enc);
            write_stack(os, blk.quant);
            write_map(os, blk.sub_dec);
            write_stack(os, blk.postq);
        }
    }
}

MrvqModule read_mrvq(std::istream& is) {
    MrvqConfig cfg = read_mrvq_config(is);
    Rng rng(0);
    MrvqModule m(cfg, 0.99, rng);
    for (std::size_t k = 0; k < m.block_count(); ++k) {
        auto& blk = m.block(k);
        blk.preq = read_stack(is);
        if (!blk.config.degenerate()) {
            blk.sub_enc = read_map(is);
            blk.quant = read_stack(is);
            blk.sub_dec = read_map(is);
            blk.postq = read_stack(is);
        }
    }
    return m;
}

void write_model_header(std::ostream& os, ModelKind kind) {
    write_magic(os, kModelMagic);
    io::put_u16(os, kFormatVersion);
    io::put_u8(os, static_cast<std::uint8_t>(kind));
}

ModelKind read_model_header(std::istream& is) {
    check_magic(is, kModelMagic, "checkpoint");
    check_version(is, "checkpoint");
    std::uint8_t kind = io::get_u8(is);
    if (kind > 1) throw DataError("checkpoint: unknown model kind");
    return static_cast<ModelKind>(kind);
}

}  // namespace

void write_teacher(std::ostream& os, const NacModel& model) {
    write_model_header(os, ModelKind::Teacher);
    write_nac_config(os, model.config());
    for (const auto& m : model.encoder()) write_map(os, m);
    for (const auto& m : model.decoder()) write_map(os, m);
    write_stack(os, model.rvq());
}

NacModel read_teacher(std::istream& is) {
    if (read_model_header(is) != ModelKind::Teacher) throw DataError("checkpoint: not a teacher model");
    NacConfig cfg = read_nac_config(is);
    std::vector<StridedLinearMap> encoder, decoder;
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) encoder.push_back(read_map(is));
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) decoder.push_back(read_map(is));
    RvqStack rvq = read_stack(is);
    return NacModel(std::move(cfg), std::move(encoder), std::move(decoder), std::move(rvq));
}

void write_student(std::ostream& os, const StudentModel& model) {
    write_model_header(os, ModelKind::Student);
    write_nac_config(os, model.nac_config());
    for (const auto& m : model.encoder()) write_map(os, m);
    for (const auto& m : model.decoder()) write_map(os, m);
    write_mrvq(os, model.mrvq());
}

StudentModel read_student(std::istream& is) {
    if (read_model_header(is) != ModelKind::Student) throw DataError("checkpoint: not a student model");
    NacConfig cfg = read_nac_config(is);
    std::vector<StridedLinearMap> encoder, decoder;
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) encoder.push_back(read_map(is));
    for (std::size_t i = 0; i < cfg.strides.size(); ++i) decoder.push_back(read_map(is));
    MrvqModule mrvq = read_mrvq(is);
    return StudentModel(std::move(cfg), std::move(encoder), std::move(decoder), std::move(mrvq));
}

void save_teacher(const std::string& path, const NacModel& model) {
    save_file(path, [&](std::ostream& os) { write_teacher(os, model); });
}

NacModel load_teacher(const std::string& path) {
    return load_file(path, [](std::istream& is) { return read_teacher(is); });
}

void save_student(const std::string& path, const StudentModel& model) {
    save_file(path, [&](std::ostream& os) { write_student(os, model); });
}

StudentModel load_student(const std::string& path) {
    return load_file(path, [](std::istream& is) { return read_student(is); });
}

AnyModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    std::uint16_t version = io::get_u16(is);
    std::uint8_t kind = io::get_u8(is);
    if (!is || std::memcmp(magic, kModelMagic, 4) != 0 || version != kFormatVersion || kind > 1)
        throw DataError("checkpoint: bad header in " + path);
    is.seekg(0);
    AnyModel any;
    any.kind = static_cast<ModelKind>(kind);
    if (any.kind == ModelKind::Teacher)
        any.teacher = read_teacher(is);
    else
        any.student = read_student(is);
    return any;
}

}  // namespace mrq
