#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wcmi/gmm.hpp"
#include "wcmi/matrix.hpp"
#include "wcmi/rng.hpp"

namespace wcmi::io {

/// Malformed input file; the message names the path and, for binary formats,
/// the byte offset where reading stopped.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, std::uint64_t& offset,
                                 const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4)
        throw FormatError(path + ": truncated file at byte " + std::to_string(offset));
    offset += 4;
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_u32_be(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::ifstream open_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open");
    return in;
}

}  // namespace detail

/// Image stack parsed from an IDX file: one row per image, pixels in [0,1].
struct IdxImages {
    Matrix rows;
    std::size_t height = 0;
    std::size_t width = 0;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parses a big-endian IDX image file (magic 0x00000803, then count, rows,
/// cols, then unsigned bytes). Pixels are scaled to [0,1] by 1/255.
inline IdxImages read_idx_images(const std::string& path) {
    std::ifstream in = detail::open_binary(path);
    std::uint64_t offset = 0;
    const std::uint32_t magic = detail::read_u32_be(in, offset, path);
    if (magic != kIdxImageMagic) {
        std::ostringstream msg;
        msg << path << ": bad image magic 0x" << std::hex << magic << " at byte 0";
        throw FormatError(msg.str());
    }
    const std::uint32_t n = detail::read_u32_be(in, offset, path);
    const std::uint32_t h = detail::read_u32_be(in, offset, path);
    const std::uint32_t w = detail::read_u32_be(in, offset, path);
    if (h == 0 || w == 0 || n == 0)
        throw FormatError(path + ": empty image dimensions in header");

    IdxImages out;
    out.height = h;
    out.width = w;
    out.rows = Matrix(n, std::size_t(h) * w);
    std::vector<unsigned char> buf(std::size_t(h) * w);
    for (std::uint32_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
        if (std::size_t(in.gcount()) != buf.size())
            throw FormatError(path + ": truncated file at byte " +
                              std::to_string(offset + std::uint64_t(in.gcount())));
        offset += buf.size();
        double* row = out.rows.row(i);
        for (std::size_t j = 0; j < buf.size(); ++j) row[j] = double(buf[j]) / 255.0;
    }
    return out;
}

/// Parses a big-endian IDX label file (magic 0x00000801, then count, bytes).
inline std::vector<int> read_idx_labels(const std::string& path) {
    std::ifstream in = detail::open_binary(path);
    std::uint64_t offset = 0;
    const std::uint32_t magic = detail::read_u32_be(in, offset, path);
    if (magic != kIdxLabelMagic) {
        std::ostringstream msg;
        msg << path << ": bad label magic 0x" << std::hex << magic << " at byte 0";
        throw FormatError(msg.str());
    }
    const std::uint32_t n = detail::read_u32_be(in, offset, path);
    std::vector<int> labels(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const int c = in.get();
        if (c == std::ifstream::traits_type::eof())
            throw FormatError(path + ": truncated file at byte " + std::to_string(offset));
        ++offset;
        labels[i] = c;
    }
    return labels;
}

/// Writes rows of [0,1] pixels as an IDX image file (bytes, rounded).
inline void write_idx_images(const std::string& path, const Matrix& rows, std::size_t height,
                             std::size_t width) {
    if (rows.cols() != height * width)
        throw std::invalid_argument("write_idx_images: shape does not match the columns");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    detail::write_u32_be(out, kIdxImageMagic);
    detail::write_u32_be(out, std::uint32_t(rows.rows()));
    detail::write_u32_be(out, std::uint32_t(height));
    detail::write_u32_be(out, std::uint32_t(width));
    for (std::size_t i = 0; i < rows.rows(); ++i)
        for (std::size_t j = 0; j < rows.cols(); ++j) {
            const double v = std::clamp(rows(i, j), 0.0, 1.0);
            out.put(char(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    if (!out) throw FormatError(path + ": write failed");
}

inline void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(path + ": cannot open for writing");
    detail::write_u32_be(out, kIdxLabelMagic);
    detail::write_u32_be(out, std::uint32_t(labels.size()));
    for (int y : labels) {
        if (y < 0 || y > 255) throw std::invalid_argument("write_idx_labels: label not a byte");
        out.put(char(static_cast<unsigned char>(y)));
    }
    if (!out) throw FormatError(path + ": write failed");
}

/// Mean-pools each h x w row image over non-overlapping factor x factor
/// blocks; both sides must divide evenly.
inline Matrix mean_pool(const Matrix& rows, std::size_t height, std::size_t width,
                        std::size_t factor) {
    if (factor == 0) throw std::invalid_argument("mean_pool: zero factor");
    if (rows.cols() != height * width)
        throw std::invalid_argument("mean_pool: shape does not match the columns");
    if (height % factor != 0 || width % factor != 0)
        throw std::invalid_argument("mean_pool: factor must divide both sides");
    if (factor == 1) return rows;
    const std::size_t oh = height / factor, ow = width / factor;
    Matrix out(rows.rows(), oh * ow);
    const double scale = 1.0 / double(factor * factor);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        const double* src = rows.row(i);
        double* dst = out.row(i);
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
                double acc = 0.0;
                for (std::size_t dr = 0; dr < factor; ++dr)
                    for (std::size_t dc = 0; dc < factor; ++dc)
                        acc += src[(r * factor + dr) * width + (c * factor + dc)];
                dst[r * ow + c] = acc * scale;
            }
    }
    return out;
}

/**
 * Reads a numeric CSV into rows of doubles. With `labeled`, the last column
 * must hold integers and becomes the label vector. Every value must be
 * finite; the error message names the line.
 */
inline SampleBatch read_csv(const std::string& path, bool labeled) {
    std::ifstream in(path);
    if (!in) throw FormatError(path + ": cannot open");
    std::vector<Vec> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used])))
                    ++used;
                if (used != cell.size()) throw std::invalid_argument("trailing characters");
                vals.push_back(v);
            } catch (const std::exception&) {
                throw FormatError(path + ": line " + std::to_string(lineno) +
                                  ": not a number: '" + cell + "'");
            }
        }
        if (vals.empty())
            throw FormatError(path + ": line " + std::to_string(lineno) + ": no values");
        for (double v : vals)
            if (!std::isfinite(v))
                throw FormatError(path + ": line " + std::to_string(lineno) +
                                  ": non-finite value");
        if (width == 0)
            width = vals.size();
        else if (vals.size() != width)
            throw FormatError(path + ": line " + std::to_string(lineno) +
                              ": expected " + std::to_string(width) + " columns, found " +
                              std::to_string(vals.size()));
        if (labeled) {
            const double y = vals.back();
            if (y != std::floor(y) || y < 0.0 || y > 1e9)
                throw FormatError(path + ": line " + std::to_string(lineno) +
                                  ": label must be a nonnegative integer");
            labels.push_back(int(y));
            vals.pop_back();
        }
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw FormatError(path + ": no rows");
    if (labeled && rows.front().empty())
        throw FormatError(path + ": labeled file needs at least two columns");
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows.front().size(); ++j) m(i, j) = rows[i][j];
    return labeled ? SampleBatch(std::move(m), std::move(labels)) : SampleBatch(std::move(m));
}

/// Where a dataset comes from and how it is post-processed.
struct DatasetSpec {
    enum class Source { synthetic_gmm, idx_files, csv };
    enum class Normalize { none, to_unit_box };

    Source source = Source::synthetic_gmm;

    // synthetic_gmm
    std::optional<gmm::GaussianMixtureSpec> mixture;
    std::size_t n = 1000;

    // idx_files
    std::string image_path;
    std::string label_path;  // empty for unlabeled loads
    std::size_t downsample = 1;

    // csv
    std::string csv_path;
    bool csv_labeled = false;

    // applied to every source
    std::size_t take = 0;  // 0 keeps everything
    Normalize normalization = Normalize::none;
};

/// Loaded rows plus image geometry when the source had one.
struct Dataset {
    SampleBatch batch;
    std::size_t height = 0;  // 0 when the source is not image-shaped
    std::size_t width = 0;
};

/// Per-column min-max rescale into [0,1]; constant columns collapse to 0.
inline void scale_to_unit_box(Matrix& rows) {
    if (rows.rows() == 0) return;
    for (std::size_t c = 0; c < rows.cols(); ++c) {
        double lo = rows(0, c), hi = rows(0, c);
        for (std::size_t i = 1; i < rows.rows(); ++i) {
            lo = std::min(lo, rows(i, c));
            hi = std::max(hi, rows(i, c));
        }
        const double span = hi - lo;
        for (std::size_t i = 0; i < rows.rows(); ++i)
            rows(i, c) = span > 0.0 ? (rows(i, c) - lo) / span : 0.0;
    }
}

/**
 * Materializes a dataset: draws or parses rows, mean-pools images, takes a
 * seeded subsample, and applies the normalization choice. Mixture labels
 * {-1,+1} are remapped to classes {0,1}.
 */
inline Dataset load_dataset(const DatasetSpec& spec, SeededRng& rng) {
    Dataset out;
    switch (spec.source) {
        case DatasetSpec::Source::synthetic_gmm: {
            if (!spec.mixture)
                throw std::invalid_argument("load_dataset: synthetic source needs a mixture");
            out.batch = gmm::sample_gmm(*spec.mixture, spec.n, rng);
            for (int& y : out.batch.labels) y = y > 0 ? 1 : 0;
            break;
        }
        case DatasetSpec::Source::idx_files: {
            IdxImages imgs = read_idx_images(spec.image_path);
            if (spec.downsample > 1) {
                imgs.rows = mean_pool(imgs.rows, imgs.height, imgs.width, spec.downsample);
                imgs.height /= spec.downsample;
                imgs.width /= spec.downsample;
            }
            out.height = imgs.height;
            out.width = imgs.width;
            if (!spec.label_path.empty()) {
                std::vector<int> labels = read_idx_labels(spec.label_path);
                if (labels.size() != imgs.rows.rows())
                    throw FormatError(spec.image_path + ": " +
                                      std::to_string(imgs.rows.rows()) + " images vs " +
                                      std::to_string(labels.size()) + " labels in " +
                                      spec.label_path);
                out.batch = SampleBatch(std::move(imgs.rows), std::move(labels));
            } else {
                out.batch = SampleBatch(std::move(imgs.rows));
            }
            break;
        }
        case DatasetSpec::Source::csv:
            out.batch = read_csv(spec.csv_path, spec.csv_labeled);
            break;
    }

    if (spec.take > 0 && spec.take < out.batch.size())
        out.batch = out.batch.subset(rng.sample_indices(out.batch.size(), spec.take));

    if (spec.normalization == DatasetSpec::Normalize::to_unit_box)
        scale_to_unit_box(out.batch.rows);

    for (double v : out.batch.rows.data())
        if (!std::isfinite(v)) throw FormatError("load_dataset: non-finite row value");
    return out;
}

}  // namespace wcmi::io
