#include "dualcan/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "dualcan/csv.hpp"
#include "dualcan/errors.hpp"
#include "dualcan/ground_truth.hpp"

static_assert(std::endian::native == std::endian::little, "dataset files are little-endian");

namespace dualcan::datagen {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'D', 'S'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        if (bytes_.size() - pos_ < sizeof(T)) {
            throw FormatError(std::string("truncated file while reading ") + what, pos_);
        }
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_dataset(const NoisyDataset& ds) {
    const auto clean = GroundTruth::clean_labels(ds);
    const auto flags = GroundTruth::flags(ds);
    std::string out;
    out.reserve(30 + ds.size() * (ds.dim() * 8 + 9));
    out.append(kMagic, 4);
    put<std::uint32_t>(out, kDatasetFormatVersion);
    put<std::uint64_t>(out, ds.size());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.dim()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.num_classes()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(ds.domain()));
    put<std::uint8_t>(out, ds.has_observed_labels() ? 1 : 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.features().row(i)) put<double>(out, v);
        put<std::int32_t>(out, ds.has_observed_labels() ? (*ds.observed_labels())[i] : -1);
        put<std::int32_t>(out, clean[i]);
        std::uint8_t bits = (flags[i].label_corrupted ? 1 : 0) | (flags[i].feature_corrupted ? 2 : 0);
        put<std::uint8_t>(out, bits);
    }
    return out;
}

NoisyDataset deserialize_dataset(const std::string& bytes) {
    Reader r(bytes);
    char magic[4];
    for (char& c : magic) c = r.get<char>("magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic", 0);
    const auto version = r.get<std::uint32_t>("version");
    if (version != kDatasetFormatVersion) throw VersionError(version, kDatasetFormatVersion);
    const auto n = r.get<std::uint64_t>("instance count");
    const auto d = r.get<std::uint32_t>("feature dim");
    const auto k = r.get<std::uint32_t>("class count");
    const auto header_end = r.pos();
    const auto domain = r.get<std::uint8_t>("domain tag");
    if (domain > 1) throw FormatError("unknown domain tag", header_end);
    const auto has_observed = r.get<std::uint8_t>("label presence");
    if (has_observed > 1) throw FormatError("bad label presence byte", r.pos() - 1);
    if (d == 0 || k < 2) throw FormatError("invalid dimensions in header", 8);

    const std::uint64_t record = std::uint64_t{d} * 8 + 9;
    if (n > r.remaining() / record) throw FormatError("truncated file: header promises more records", r.pos());

    Matrix x(n, d);
    std::optional<std::vector<ClassId>> observed;
    if (has_observed) observed.emplace(n);
    std::vector<ClassId> clean(n);
    std::vector<NoiseFlags> flags(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::uint32_t j = 0; j < d; ++j) x(i, j) = r.get<double>("feature");
        const auto obs_at = r.pos();
        const auto obs = r.get<std::int32_t>("observed label");
        const auto cl_at = r.pos();
        const auto cl = r.get<std::int32_t>("clean label");
        const auto bits_at = r.pos();
        const auto bits = r.get<std::uint8_t>("flags");
        if (has_observed) {
            if (obs < 0 || obs >= static_cast<std::int32_t>(k)) throw FormatError("observed label out of range", obs_at);
            (*observed)[i] = obs;
        } else if (obs != -1) {
            throw FormatError("observed label present in unlabeled dataset", obs_at);
        }
        if (cl < 0 || cl >= static_cast<std::int32_t>(k)) throw FormatError("clean label out of range", cl_at);
        if (bits > 3) throw FormatError("unknown flag bits", bits_at);
        clean[i] = cl;
        flags[i] = {(bits & 1) != 0, (bits & 2) != 0};
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after last record", r.pos());
    return NoisyDataset(std::move(x), std::move(observed), std::move(clean), std::move(flags),
                        static_cast<Domain>(domain), static_cast<int>(k));
}

void save_dataset(const NoisyDataset& dataset, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_dataset(dataset));
}

NoisyDataset load_dataset(const std::filesystem::path& path) { return deserialize_dataset(read_file(path)); }

void export_dataset_csv(const NoisyDataset& ds, const std::filesystem::path& path) {
    const auto clean = GroundTruth::clean_labels(ds);
    const auto flags = GroundTruth::flags(ds);
    std::ostringstream out;
    for (std::size_t j = 0; j < ds.dim(); ++j) out << 'f' << j << ',';
    out << "observed,clean,label_flag,feature_flag\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.features().row(i)) out << format_double(v) << ',';
        if (ds.has_observed_labels()) out << (*ds.observed_labels())[i];
        out << ',' << clean[i] << ',' << int(flags[i].label_corrupted) << ',' << int(flags[i].feature_corrupted)
            << '\n';
    }
    write_file_atomic(path, out.str());
}

}  // namespace dualcan::datagen
