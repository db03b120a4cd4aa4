#pragma once

#include "sdtpwl/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sdtpwl::io {

/// Fixed-layout record file shared by snapshots, ensembles and KLE models.
///
///   bytes 0-7   magic "SDTPWLR1"
///   u64         nx
///   u64         ny
///   u64         count       number of records (N for a trajectory)
///   u64         record_len  doubles per record
///   f64[count * record_len] records, row-major (record after record)
///
/// All integers and doubles are little-endian.
struct RecordFile
{
    std::uint64_t nx = 0;
    std::uint64_t ny = 0;
    std::vector<Vector> records;
};

void write_records(const std::filesystem::path& path, const RecordFile& file);
RecordFile read_records(const std::filesystem::path& path);

/// Named dense matrices in one file ("SDTPWLB1", u64 entry count, then per
/// entry: u64 name length, name bytes, u64 rows, u64 cols, f64 row-major data).
class Bundle
{
public:
    void put(const std::string& name, Matrix m) { entries_[name] = std::move(m); }
    void put(const std::string& name, const Vector& v) { entries_[name] = Matrix(v); }
    void put_scalar(const std::string& name, double v) { entries_[name] = Matrix::Constant(1, 1, v); }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    const Matrix& get(const std::string& name) const;
    Vector vector(const std::string& name) const;
    double scalar(const std::string& name) const { return get(name)(0, 0); }
    std::size_t size() const { return entries_.size(); }

    void save(const std::filesystem::path& path) const;
    static Bundle load(const std::filesystem::path& path);

private:
    std::map<std::string, Matrix> entries_;
};

/// Comma-separated table with a header row; doubles printed with 17
/// significant digits so files reproduce bit-for-bit.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

std::string format_double(double v);

} // namespace sdtpwl::io
