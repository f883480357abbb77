#include "dualcan/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "dualcan/csv.hpp"
#include "dualcan/errors.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");

namespace dualcan::model {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'M', 'D'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_layer(std::string& out, const Layer& l) {
    for (double v : l.weights.data) put(out, v);
    for (double v : l.bias) put(out, v);
}

struct Cursor {
    const std::string& bytes;
    std::size_t pos = 0;

    template <typename T>
    T get() {
        if (bytes.size() - pos < sizeof(T)) throw FormatError("truncated checkpoint", pos);
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    Layer layer(std::size_t in, std::size_t out) {
        Layer l{Matrix(out, in), std::vector<double>(out)};
        for (auto& v : l.weights.data) v = get<double>();
        for (auto& v : l.bias) v = get<double>();
        return l;
    }
};

}  // namespace

std::string serialize_model(const Model& model) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.generator.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_dim()));
    for (const auto& l : model.generator) put<std::uint32_t>(out, static_cast<std::uint32_t>(l.fan_out()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.num_classes()));
    for (const auto& l : model.generator) put_layer(out, l);
    put_layer(out, model.head_s);
    put_layer(out, model.head_t);
    return out;
}

Model deserialize_model(const std::string& bytes) {
    Cursor c{bytes};
    for (char expected : kMagic) {
        if (c.get<char>() != expected) throw FormatError("bad checkpoint magic", 0);
    }
    const auto version = c.get<std::uint32_t>();
    if (version != kCheckpointFormatVersion) throw VersionError(version, kCheckpointFormatVersion);
    const auto depth = c.get<std::uint32_t>();
    if (depth == 0 || depth > 64) throw FormatError("implausible generator depth", c.pos - 4);
    std::vector<std::uint32_t> dims(depth + 1);
    for (auto& d : dims) {
        d = c.get<std::uint32_t>();
        if (d == 0 || d > (1u << 20)) throw FormatError("implausible layer width", c.pos - 4);
    }
    const auto k = c.get<std::uint32_t>();
    if (k < 2 || k > (1u << 20)) throw FormatError("implausible class count", c.pos - 4);

    Model m;
    for (std::uint32_t l = 0; l < depth; ++l) m.generator.push_back(c.layer(dims[l], dims[l + 1]));
    m.head_s = c.layer(dims.back(), k);
    m.head_t = c.layer(dims.back(), k);
    if (c.pos != bytes.size()) throw FormatError("trailing bytes in checkpoint", c.pos);
    return m;
}

void save_model(const Model& model, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace dualcan::model
