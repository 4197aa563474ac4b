#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlsum/errors.hpp"
#include "rlsum/matrix.hpp"

namespace rlsum {

// Named collection of weight matrices with same-shape gradient buffers.
// Entry order is insertion order and is the canonical order for the
// optimizer, gradient clipping and serialization.
class ParameterSet {
public:
    struct Entry {
        std::string name;
        Matrix value;
        Matrix grad;
    };

    Matrix& add(const std::string& name, std::size_t rows, std::size_t cols) {
        if (index_.count(name)) throw ValidationError("ParameterSet::add: duplicate name " + name);
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, Matrix(rows, cols), Matrix(rows, cols)});
        return entries_.back().value;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Matrix& value(const std::string& name) { return entries_[at(name)].value; }
    const Matrix& value(const std::string& name) const { return entries_[at(name)].value; }
    Matrix& grad(const std::string& name) { return entries_[at(name)].grad; }
    const Matrix& grad(const std::string& name) const { return entries_[at(name)].grad; }

    std::size_t size() const { return entries_.size(); }
    Entry& entry(std::size_t i) { return entries_[i]; }
    const Entry& entry(std::size_t i) const { return entries_[i]; }

    void zero_grads() {
        for (auto& e : entries_) e.grad.fill(0.0);
    }

    // Copies values (not grads) from another set with identical layout.
    void copy_values_from(const ParameterSet& other) {
        if (other.size() != size()) throw DimensionError("copy_values_from: entry count mismatch");
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].name != other.entries_[i].name ||
                !entries_[i].value.same_shape(other.entries_[i].value))
                throw DimensionError("copy_values_from: layout mismatch at " + entries_[i].name);
            entries_[i].value.data = other.entries_[i].value.data;
        }
    }

    bool values_equal(const ParameterSet& other) const {
        if (other.size() != size()) return false;
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].name != other.entries_[i].name) return false;
            if (entries_[i].value.data != other.entries_[i].value.data) return false;
        }
        return true;
    }

private:
    std::size_t at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValidationError("ParameterSet: unknown parameter " + name);
        return it->second;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(os, b, 8);
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw IoError(std::string("unexpected end of file while reading ") + what);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    read_bytes(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
    unsigned char b[8];
    read_bytes(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double read_f64(std::istream& is, const char* what) {
    return std::bit_cast<double>(read_u64(is, what));
}

inline float read_f32(std::istream& is, const char* what) {
    return std::bit_cast<float>(read_u32(is, what));
}

}  // namespace detail

// Checkpoint container: magic "RLSN", u32 version, u32 entry count, then per
// entry u32 name length, name bytes, u64 rows, u64 cols, row-major f64
// little-endian values.
inline constexpr std::uint32_t kParameterFormatVersion = 1;

inline void save_parameter_set(const std::string& path, const ParameterSet& ps) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("RLSN", 4);
    detail::write_u32(os, kParameterFormatVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& e = ps.entry(i);
        detail::write_u32(os, static_cast<std::uint32_t>(e.name.size()));
        detail::write_bytes(os, e.name.data(), e.name.size());
        detail::write_u64(os, e.value.rows);
        detail::write_u64(os, e.value.cols);
        for (double v : e.value.data) detail::write_f64(os, v);
    }
    if (!os) throw IoError("write failed: " + path);
}

inline ParameterSet load_parameter_set(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    char magic[4];
    detail::read_bytes(is, magic, 4, "magic");
    if (std::string(magic, 4) != "RLSN") throw IoError("not a parameter container: " + path);
    const std::uint32_t version = detail::read_u32(is, "version");
    if (version != kParameterFormatVersion)
        throw IoError("unsupported parameter container version " + std::to_string(version));
    const std::uint32_t count = detail::read_u32(is, "entry count");
    ParameterSet ps;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::read_u32(is, "name length");
        std::string name(name_len, '\0');
        detail::read_bytes(is, name.data(), name_len, "name");
        const std::uint64_t rows = detail::read_u64(is, "rows");
        const std::uint64_t cols = detail::read_u64(is, "cols");
        Matrix& m = ps.add(name, rows, cols);
        for (double& v : m.data) v = detail::read_f64(is, "values");
    }
    return ps;
}

}  // namespace rlsum
