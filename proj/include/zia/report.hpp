#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "zia/common.hpp"

namespace zia::report {

// In-memory CSV with deterministic cell formatting. Everything is rendered
// through fmt_double/fmt_fixed so identical runs produce identical bytes.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    class RowBuilder {
    public:
        explicit RowBuilder(CsvTable& table) : table_(table) {}
        RowBuilder& str(const std::string& s) { cells_.push_back(s); return *this; }
        RowBuilder& num(double v) { cells_.push_back(fmt_double(v)); return *this; }
        RowBuilder& num(double v, int decimals) { cells_.push_back(fmt_fixed(v, decimals)); return *this; }
        RowBuilder& integer(long long v) { cells_.push_back(std::to_string(v)); return *this; }
        RowBuilder& flag(bool b) { cells_.push_back(b ? "1" : "0"); return *this; }
        RowBuilder& empty() { cells_.push_back(""); return *this; }
        ~RowBuilder() { table_.push_row(std::move(cells_)); }

    private:
        CsvTable& table_;
        std::vector<std::string> cells_;
    };

    RowBuilder row() { return RowBuilder(*this); }

    void push_row(std::vector<std::string> cells) {
        if (cells.size() != header_.size())
            throw std::invalid_argument("CsvTable: row width mismatch");
        rows_.push_back(std::move(cells));
    }

    std::string to_string() const {
        std::ostringstream os;
        for (std::size_t i = 0; i < header_.size(); ++i) {
            if (i) os << ',';
            os << header_[i];
        }
        os << '\n';
        for (const auto& r : rows_) {
            for (std::size_t i = 0; i < r.size(); ++i) {
                if (i) os << ',';
                os << r[i];
            }
            os << '\n';
        }
        return os.str();
    }

    bool empty() const { return rows_.empty(); }
    std::size_t row_count() const { return rows_.size(); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

// Quoted projection band, e.g. "80-90 ms". Bands come from the published
// projections the toolkit reproduces.
struct Band {
    double lo = 0.0;
    double hi = 0.0;
    std::string unit;

    bool contains(double v) const { return v >= lo && v <= hi; }
    std::string to_string() const {
        return fmt_double(lo) + "-" + fmt_double(hi) + " " + unit;
    }
};

// Every band comparison lands here; a row is flagged whenever the computed
// value falls outside the quoted band. Nothing is ever "corrected" to match.
class DiscrepancyLog {
public:
    DiscrepancyLog()
        : table_({"context", "computed", "unit", "quoted_band", "inside_band", "note"}) {}

    bool add(const std::string& context, double computed, const Band& band,
             const std::string& note) {
        const bool inside = band.contains(computed);
        table_.row()
            .str(context)
            .num(computed)
            .str(band.unit)
            .str(band.to_string())
            .flag(inside)
            .str(note);
        if (!inside) ++mismatches_;
        return inside;
    }

    const CsvTable& table() const { return table_; }
    int mismatches() const { return mismatches_; }

private:
    CsvTable table_;
    int mismatches_ = 0;
};

// Stable 64-bit hash of a canonical (sorted-key) JSON dump.
inline std::string config_hash(const nlohmann::json& j) {
    const std::uint64_t h = fnv1a64(j.dump());
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Report bundle writer: all files are staged into "<dir>.partial" and moved
// into place on success; on failure the staging directory is removed so no
// partial outputs survive.
class BundleWriter {
public:
    explicit BundleWriter(std::filesystem::path out_dir) : final_dir_(std::move(out_dir)) {
        staging_ = final_dir_;
        staging_ += ".partial";
        std::filesystem::remove_all(staging_);
        std::filesystem::create_directories(staging_);
    }

    ~BundleWriter() {
        if (!committed_) {
            std::error_code ec;
            std::filesystem::remove_all(staging_, ec);
        }
    }

    void write_text(const std::string& filename, const std::string& body) {
        std::ofstream f(staging_ / filename, std::ios::binary);
        if (!f) throw std::runtime_error("BundleWriter: cannot write " + filename);
        f << body;
        written_.push_back(filename);
    }

    void write_csv(const std::string& filename, const CsvTable& table) {
        write_text(filename, table.to_string());
    }

    void write_json(const std::string& filename, const nlohmann::json& j) {
        write_text(filename, j.dump(2) + "\n");
    }

    // Record a file written into the staging dir by other means (checkpoints).
    void note_file(const std::string& filename) { written_.push_back(filename); }

    const std::filesystem::path& staging_dir() const { return staging_; }
    const std::vector<std::string>& files() const { return written_; }

    void commit() {
        std::filesystem::remove_all(final_dir_);
        std::filesystem::create_directories(final_dir_.parent_path().empty()
                                                ? std::filesystem::path(".")
                                                : final_dir_.parent_path());
        std::filesystem::rename(staging_, final_dir_);
        committed_ = true;
    }

private:
    std::filesystem::path final_dir_;
    std::filesystem::path staging_;
    std::vector<std::string> written_;
    bool committed_ = false;
};

}  // namespace zia::report
