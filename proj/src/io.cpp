#include "sdtpwl/io.hpp"

#include <fmt/format.h>

#include <cstring>
#include <fstream>

namespace sdtpwl::io {

namespace {

constexpr char record_magic[8] = {'S', 'D', 'T', 'P', 'W', 'L', 'R', '1'};
constexpr char bundle_magic[8] = {'S', 'D', 'T', 'P', 'W', 'L', 'B', '1'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::istream& in)
{
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

std::ofstream open_out(const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("io", fmt::format("cannot open {} for writing", path.string()));
    return out;
}

std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("io", fmt::format("missing artifact {}", path.string()));
    return in;
}

} // namespace

void write_records(const std::filesystem::path& path, const RecordFile& file)
{
    auto out = open_out(path);
    const std::uint64_t len = file.records.empty() ? 0 : static_cast<std::uint64_t>(file.records.front().size());
    out.write(record_magic, sizeof record_magic);
    put_u64(out, file.nx);
    put_u64(out, file.ny);
    put_u64(out, file.records.size());
    put_u64(out, len);
    for (const auto& r : file.records) {
        if (static_cast<std::uint64_t>(r.size()) != len)
            throw Error("io", "records of unequal length");
        out.write(reinterpret_cast<const char*>(r.data()), static_cast<std::streamsize>(len * sizeof(double)));
    }
    if (!out)
        throw Error("io", fmt::format("write to {} failed", path.string()));
}

RecordFile read_records(const std::filesystem::path& path)
{
    auto in = open_in(path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, record_magic, sizeof magic) != 0)
        throw Error("io", fmt::format("{} is not a record file", path.string()));
    RecordFile file;
    file.nx = get_u64(in);
    file.ny = get_u64(in);
    const auto count = get_u64(in);
    const auto len = get_u64(in);
    file.records.assign(count, Vector(static_cast<Eigen::Index>(len)));
    for (auto& r : file.records)
        in.read(reinterpret_cast<char*>(r.data()), static_cast<std::streamsize>(len * sizeof(double)));
    if (!in)
        throw Error("io", fmt::format("{} is truncated", path.string()));
    return file;
}

const Matrix& Bundle::get(const std::string& name) const
{
    const auto it = entries_.find(name);
    if (it == entries_.end())
        throw Error("io", fmt::format("bundle has no entry '{}'", name));
    return it->second;
}

Vector Bundle::vector(const std::string& name) const
{
    const Matrix& m = get(name);
    return Eigen::Map<const Vector>(m.data(), m.size());
}

void Bundle::save(const std::filesystem::path& path) const
{
    auto out = open_out(path);
    out.write(bundle_magic, sizeof bundle_magic);
    put_u64(out, entries_.size());
    for (const auto& [name, m] : entries_) {
        put_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(out, static_cast<std::uint64_t>(m.rows()));
        put_u64(out, static_cast<std::uint64_t>(m.cols()));
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
        out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    }
    if (!out)
        throw Error("io", fmt::format("write to {} failed", path.string()));
}

Bundle Bundle::load(const std::filesystem::path& path)
{
    auto in = open_in(path);
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, bundle_magic, sizeof magic) != 0)
        throw Error("io", fmt::format("{} is not a bundle file", path.string()));
    Bundle b;
    const auto count = get_u64(in);
    for (std::uint64_t k = 0; k < count; ++k) {
        std::string name(get_u64(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        const auto rows = static_cast<Eigen::Index>(get_u64(in));
        const auto cols = static_cast<Eigen::Index>(get_u64(in));
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
        in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
        if (!in)
            throw Error("io", fmt::format("{} is truncated", path.string()));
        b.entries_[name] = rm;
    }
    return b;
}

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw Error("io", fmt::format("cannot open {} for writing", path.string()));
    for (std::size_t k = 0; k < header.size(); ++k)
        out << (k ? "," : "") << header[k];
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t k = 0; k < row.size(); ++k)
            out << (k ? "," : "") << format_double(row[k]);
        out << '\n';
    }
}

} // namespace sdtpwl::io
