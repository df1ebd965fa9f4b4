#include "normlab/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "normlab/errors.hpp"

namespace normlab {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off,
                        const std::string& path) {
    if (off + 4 > buf.size()) {
        throw FormatError("'" + path + "': truncated at byte " + std::to_string(off));
    }
    return (std::uint32_t(buf[off]) << 24) | (std::uint32_t(buf[off + 1]) << 16) |
           (std::uint32_t(buf[off + 2]) << 8) | std::uint32_t(buf[off + 3]);
}

std::vector<std::size_t> labels_from_tensor(const Tensor& t, std::size_t classes,
                                            const std::string& what) {
    std::vector<std::size_t> labels;
    labels.reserve(t.numel());
    for (double v : t.data()) {
        const auto label = static_cast<std::size_t>(v);
        if (label >= classes) {
            throw DataError(what + ": label " + std::to_string(label) +
                            " outside [0, " + std::to_string(classes) + ")");
        }
        labels.push_back(label);
    }
    return labels;
}

}  // namespace

Tensor load_idx(const std::string& path) {
    const auto buf = read_file(path);
    const std::uint32_t magic = read_be32(buf, 0, path);
    std::size_t rank;
    if (magic == 0x00000801u) {
        rank = 1;
    } else if (magic == 0x00000803u) {
        rank = 3;
    } else {
        char hex[16];
        std::snprintf(hex, sizeof hex, "0x%08X", magic);
        throw FormatError("'" + path + "': bad magic " + hex + " at byte 0");
    }
    Shape dims(rank);
    std::size_t off = 4;
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        dims[i] = read_be32(buf, off, path);
        off += 4;
        count *= dims[i];
    }
    if (buf.size() != off + count) {
        throw FormatError("'" + path + "': expected " + std::to_string(off + count) +
                          " bytes, have " + std::to_string(buf.size()) +
                          " (payload at byte " + std::to_string(off) + ")");
    }
    if (rank == 1) {
        Tensor t(dims);
        auto& v = t.vec();
        for (std::size_t i = 0; i < count; ++i) v[i] = double(buf[off + i]);
        return t;
    }
    Tensor t(Shape{dims[0], dims[1], dims[2], 1});
    auto& v = t.vec();
    for (std::size_t i = 0; i < count; ++i) v[i] = double(buf[off + i]) / 255.0;
    return t;
}

Dataset load_mnist(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto p = [&](const char* name) { return (fs::path(dir) / name).string(); };
    Dataset data;
    data.id = "mnist";
    data.classes = 10;
    data.train_x = load_idx(p("train-images-idx3-ubyte"));
    data.test_x = load_idx(p("t10k-images-idx3-ubyte"));
    data.train_y = labels_from_tensor(load_idx(p("train-labels-idx1-ubyte")), 10,
                                      "mnist train labels");
    data.test_y = labels_from_tensor(load_idx(p("t10k-labels-idx1-ubyte")), 10,
                                     "mnist test labels");
    if (data.train_x.dim(0) != data.train_y.size() ||
        data.test_x.dim(0) != data.test_y.size()) {
        throw DataError("mnist: image/label counts disagree");
    }
    standardize(data);
    return data;
}

Tensor load_cifar10_images(const std::string& path, std::vector<std::size_t>& labels) {
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kPlane = 32 * 32;
    const auto buf = read_file(path);
    if (buf.size() % kRecord != 0) {
        throw FormatError("'" + path + "': size " + std::to_string(buf.size()) +
                          " is not a multiple of 3073 (truncated record " +
                          std::to_string(buf.size() / kRecord) + ")");
    }
    const std::size_t n = buf.size() / kRecord;
    Tensor images(Shape{n, 32, 32, 3});
    auto& v = images.vec();
    for (std::size_t r = 0; r < n; ++r) {
        const unsigned char* rec = buf.data() + r * kRecord;
        const auto label = std::size_t(rec[0]);
        if (label >= 10) {
            throw DataError("'" + path + "': record " + std::to_string(r) + " has label " +
                            std::to_string(label));
        }
        labels.push_back(label);
        for (std::size_t c = 0; c < 3; ++c) {
            const unsigned char* plane = rec + 1 + c * kPlane;
            for (std::size_t px = 0; px < kPlane; ++px) {
                v[((r * 32 + px / 32) * 32 + px % 32) * 3 + c] = double(plane[px]) / 255.0;
            }
        }
    }
    return images;
}

Dataset load_cifar10(const std::vector<std::string>& train_files,
                     const std::string& test_file) {
    Dataset data;
    data.id = "cifar10";
    data.classes = 10;
    std::vector<Tensor> parts;
    std::size_t total = 0;
    for (const auto& f : train_files) {
        parts.push_back(load_cifar10_images(f, data.train_y));
        total += parts.back().dim(0);
    }
    Tensor train(Shape{total, 32, 32, 3});
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const auto src = p.data();
        std::copy(src.begin(), src.end(), train.vec().begin() + off);
        off += src.size();
    }
    data.train_x = train;
    data.test_x = load_cifar10_images(test_file, data.test_y);
    standardize(data);
    return data;
}

Dataset synthetic_dataset(std::size_t n, const Shape& input, std::size_t classes,
                          Rng rng) {
    if (classes < 2) throw DataError("synthetic dataset needs at least 2 classes");
    if (n < classes) throw DataError("synthetic dataset needs n >= classes");
    const std::size_t d = shape_numel(input);
    if (d == 0) throw ParamError("synthetic dataset: empty input shape");

    // Orthonormalized random directions keep every pair of centers equally
    // far apart; scale 4 with unit sample noise makes the task comfortably
    // but not trivially separable.
    std::vector<std::vector<double>> centers(classes, std::vector<double>(d));
    for (auto& c : centers) {
        for (double& x : c) x = rng.normal();
    }
    if (classes <= d) {
        for (std::size_t i = 0; i < classes; ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                double proj = 0.0;
                for (std::size_t k = 0; k < d; ++k) proj += centers[i][k] * centers[j][k];
                for (std::size_t k = 0; k < d; ++k) centers[i][k] -= proj * centers[j][k];
            }
            const double norm = l2_norm(centers[i]);
            if (norm == 0.0) throw NumericError("synthetic dataset: degenerate center");
            for (double& x : centers[i]) x /= norm;
        }
    } else {
        for (auto& c : centers) {
            const double norm = l2_norm(c);
            for (double& x : c) x /= norm;
        }
    }
    for (auto& c : centers) {
        for (double& x : c) x *= 4.0;
    }

    Shape full{n};
    full.insert(full.end(), input.begin(), input.end());
    Tensor x(full);
    std::vector<std::size_t> y(n);
    auto& xv = x.vec();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t label = i % classes;
        y[i] = label;
        for (std::size_t j = 0; j < d; ++j) {
            xv[i * d + j] = centers[label][j] + rng.normal();
        }
    }

    const std::size_t n_train = (n * 4) / 5;
    Dataset data;
    data.id = "synthetic";
    data.classes = classes;
    std::vector<std::size_t> train_idx(n_train), test_idx(n - n_train);
    for (std::size_t i = 0; i < n_train; ++i) train_idx[i] = i;
    for (std::size_t i = n_train; i < n; ++i) test_idx[i - n_train] = i;
    data.train_x = gather_rows(x, train_idx);
    data.test_x = gather_rows(x, test_idx);
    data.train_y.assign(y.begin(), y.begin() + std::ptrdiff_t(n_train));
    data.test_y.assign(y.begin() + std::ptrdiff_t(n_train), y.end());
    standardize(data);
    return data;
}

void standardize(Dataset& data) {
    const Tensor& tx = data.train_x;
    if (tx.numel() == 0) return;
    const std::size_t channels = tx.dim(tx.rank() - 1);
    std::vector<double> mean(channels, 0.0), sd(channels, 0.0);
    const auto tv = tx.data();
    const std::size_t per = tx.numel() / channels;
    for (std::size_t i = 0; i < tv.size(); ++i) mean[i % channels] += tv[i];
    for (double& m : mean) m /= double(per);
    for (std::size_t i = 0; i < tv.size(); ++i) {
        const double dvi = tv[i] - mean[i % channels];
        sd[i % channels] += dvi * dvi;
    }
    for (double& s : sd) {
        s = std::sqrt(s / double(per));
        if (s == 0.0) s = 1.0;
    }
    const auto apply = [&](Tensor& t) {
        auto& v = t.vec();
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = (v[i] - mean[i % channels]) / sd[i % channels];
        }
    };
    Tensor train = data.train_x.clone();
    Tensor test = data.test_x.clone();
    apply(train);
    apply(test);
    data.train_x = train;
    data.test_x = test;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
    if (x.rank() == 0) throw ShapeError("gather_rows wants a batched tensor");
    const std::size_t row = x.numel() / x.dim(0);
    Shape out_shape = x.shape();
    out_shape[0] = idx.size();
    Tensor out(out_shape);
    const auto xv = x.data();
    auto& ov = out.vec();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.dim(0)) {
            throw ParamError("gather_rows: index " + std::to_string(idx[i]) +
                             " out of range");
        }
        std::copy(xv.begin() + std::ptrdiff_t(idx[i] * row),
                  xv.begin() + std::ptrdiff_t((idx[i] + 1) * row),
                  ov.begin() + std::ptrdiff_t(i * row));
    }
    return out;
}

}  // namespace normlab
