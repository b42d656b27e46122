// Binary persistence: model checkpoints, token streams, raw signal clips.
// All integers little-endian, floats 64-bit IEEE; read(write(x)) is
// byte-exact for every format.
#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "mrq/distill.hpp"
#include "mrq/teacher.hpp"
#include "mrq/token_lm.hpp"

namespace mrq {

// Token stream (.mrqt): magic "MRQT", version, per-block geometry header,
// then row-major 16-bit ids per block.
struct TokenStreamBlock {
    std::uint32_t frame_rate_hz = 0;
    std::uint16_t layer_count = 0;
    std::uint32_t vocab = 0;
    std::vector<TokenRow> rows;
};

struct TokenStream {
    std::uint16_t version = 1;
    std::uint32_t duration_frames = 0;  // frames at the base (last block) rate
    std::vector<TokenStreamBlock> blocks;

    // Transmitted bits per second, recomputable from the header alone.
    double bitrate_bps() const;
    // Row length for block i given the header geometry.
    std::size_t frames_for_block(std::size_t i) const;
};

void write_token_stream(std::ostream& os, const TokenStream& ts);
TokenStream read_token_stream(std::istream& is);
void save_token_stream(const std::string& path, const TokenStream& ts);
TokenStream load_token_stream(const std::string& path);

// Builds the transmitted set from an encoder pass: b rows per block, the
// terminal block contributing its a rows.
TokenStream token_stream_from_codes(const std::vector<LrvqCodes>& codes, const MrvqConfig& cfg,
                                    std::size_t duration_frames);
// Plain-RVQ (teacher) stream: one block holding every layer row.
TokenStream token_stream_from_rvq(const std::vector<TokenRow>& rows, double frame_rate_hz,
                                  std::size_t vocab);

// Raw clip (.mrqa): magic "MRQA", version, sample rate, count, f64 samples.
void write_signal(std::ostream& os, const Signal& sig);
Signal read_signal(std::istream& is);
void save_signal(const std::string& path, const Signal& sig);
Signal load_signal(const std::string& path);

// Checkpoint (.ckpt): magic "MRQC", version, kind, then the model.
enum class ModelKind : std::uint8_t { Teacher = 0, Student = 1 };

void write_teacher(std::ostream& os, const NacModel& model);
NacModel read_teacher(std::istream& is);
void write_student(std::ostream& os, const StudentModel& model);
StudentModel read_student(std::istream& is);

void save_teacher(const std::string& path, const NacModel& model);
NacModel load_teacher(const std::string& path);
void save_student(const std::string& path, const StudentModel& model);
StudentModel load_student(const std::string& path);

struct AnyModel {
    ModelKind kind = ModelKind::Teacher;
    std::optional<NacModel> teacher;
    std::optional<StudentModel> student;
};
AnyModel load_model(const std::string& path);

}  // namespace mrq
