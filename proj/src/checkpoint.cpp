#include "mpose/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace mpose {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_f64(std::ostream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

double read_f64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint truncated");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void write_tensor(std::ostream& out, const Tensor& t) {
    write_u32(out, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(out, static_cast<uint32_t>(t.dim(i)));
    // float32 payload, little-endian per element
    std::vector<unsigned char> buf(t.size() * 4);
    for (std::size_t i = 0; i < t.size(); ++i) {
        uint32_t bits;
        std::memcpy(&bits, t.data() + i, 4);
        buf[4 * i] = static_cast<unsigned char>(bits);
        buf[4 * i + 1] = static_cast<unsigned char>(bits >> 8);
        buf[4 * i + 2] = static_cast<unsigned char>(bits >> 16);
        buf[4 * i + 3] = static_cast<unsigned char>(bits >> 24);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void read_tensor_into(std::istream& in, Tensor& t) {
    const uint32_t rank = read_u32(in);
    if (rank != static_cast<uint32_t>(t.rank()))
        throw CheckpointError("checkpoint tensor rank does not match the embedded config");
    std::size_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const uint32_t dim = read_u32(in);
        if (dim != static_cast<uint32_t>(t.dim(static_cast<int>(i))))
            throw CheckpointError("checkpoint tensor shape does not match the embedded config");
        count *= dim;
    }
    std::vector<unsigned char> buf(count * 4);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw CheckpointError("checkpoint truncated");
    for (std::size_t i = 0; i < count; ++i) {
        uint32_t bits = static_cast<uint32_t>(buf[4 * i]) | static_cast<uint32_t>(buf[4 * i + 1]) << 8 |
                        static_cast<uint32_t>(buf[4 * i + 2]) << 16 |
                        static_cast<uint32_t>(buf[4 * i + 3]) << 24;
        std::memcpy(&t[i], &bits, 4);
    }
}

} // namespace

void save_checkpoint(const std::string& path, const PipelineConfig& config,
                     const ModelParams& params, const OptimizerState* optimizer) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");

    out.write(kMagic, 4);
    write_u32(out, kVersion);
    const std::string json = pipeline_config_to_json(config);
    write_u32(out, static_cast<uint32_t>(json.size()));
    out.write(json.data(), static_cast<std::streamsize>(json.size()));

    std::vector<const Tensor*> tensors = param_tensors(params);
    write_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const Tensor* t : tensors) write_tensor(out, *t);

    out.put(optimizer ? 1 : 0);
    if (optimizer) {
        write_f64(out, optimizer->lr);
        write_f64(out, optimizer->momentum);
        write_u32(out, static_cast<uint32_t>(optimizer->velocity.size()));
        for (const Tensor& t : optimizer->velocity) write_tensor(out, t);
    }
    if (!out) throw IoError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");

    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("'" + path + "' is not a checkpoint file");
    const uint32_t version = read_u32(in);
    if (version != kVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) +
                              " is not supported (expected " + std::to_string(kVersion) + ")");

    const uint32_t json_len = read_u32(in);
    if (json_len > (1u << 20)) throw CheckpointError("checkpoint config block implausibly large");
    std::string json(json_len, '\0');
    if (!in.read(json.data(), json_len)) throw CheckpointError("checkpoint truncated");

    Checkpoint ckpt;
    ckpt.config = pipeline_config_from_json(json);
    ckpt.params = build_uninitialized(ckpt.config.net);

    std::vector<Tensor*> tensors = param_tensors(ckpt.params);
    const uint32_t count = read_u32(in);
    if (count != tensors.size())
        throw CheckpointError("checkpoint parameter count does not match the embedded config");
    for (Tensor* t : tensors) read_tensor_into(in, *t);

    char has_opt;
    if (!in.get(has_opt)) throw CheckpointError("checkpoint truncated");
    if (has_opt == 1) {
        OptimizerState state;
        state.lr = read_f64(in);
        state.momentum = read_f64(in);
        const uint32_t vcount = read_u32(in);
        if (vcount != tensors.size())
            throw CheckpointError("checkpoint velocity count does not match the parameters");
        for (Tensor* t : tensors) {
            Tensor v(t->shape());
            read_tensor_into(in, v);
            state.velocity.push_back(std::move(v));
        }
        ckpt.optimizer = std::move(state);
    } else if (has_opt != 0) {
        throw CheckpointError("checkpoint optimizer flag corrupted");
    }
    return ckpt;
}

} // namespace mpose
