#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wgpt/graph.hpp"
#include "wgpt/rng.hpp"
#include "wgpt/tokens.hpp"

namespace wgpt {

// Stand-in coarse tokenizer: a k-means codebook over raw log-mel frames, so
// token streams are a deterministic, lossy function of the spectrogram.
struct VqCodebook {
    Tensor centroids; // k x dim
    std::string trained_on;
    int iterations = 0;

    std::int64_t k() const { return centroids.rows(); }
    std::int64_t dim() const { return centroids.cols(); }
};

namespace detail {

// Squared distances from every row of x to every centroid, then argmin with
// ties broken toward the lowest centroid id.
inline void assign_nearest(const Tensor& x, const Tensor& centroids, std::vector<int>& out) {
    const std::int64_t n = x.rows(), k = centroids.rows();
    eigen::CMap X = eigen::map(x);
    eigen::CMap C = eigen::map(centroids);
    const Eigen::VectorXd c2 = C.rowwise().squaredNorm();
    out.resize(static_cast<std::size_t>(n));
    eigen::RowMat cross(n, k);
    cross.noalias() = X * C.transpose();
    for (std::int64_t i = 0; i < n; ++i) {
        double best = c2(0) - 2.0 * cross(i, 0);
        int best_id = 0;
        for (std::int64_t c = 1; c < k; ++c) {
            const double d = c2(c) - 2.0 * cross(i, c);
            if (d < best) {
                best = d;
                best_id = static_cast<int>(c);
            }
        }
        out[static_cast<std::size_t>(i)] = best_id;
    }
}

inline std::int64_t count_distinct_rows(const Tensor& x) {
    const std::int64_t n = x.rows(), d = x.cols();
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    auto less = [&](std::int64_t a, std::int64_t b) {
        return std::lexicographical_compare(x.data() + a * d, x.data() + (a + 1) * d,
                                            x.data() + b * d, x.data() + (b + 1) * d);
    };
    std::sort(order.begin(), order.end(), less);
    std::int64_t distinct = n == 0 ? 0 : 1;
    for (std::int64_t i = 1; i < n; ++i)
        if (less(order[static_cast<std::size_t>(i - 1)], order[static_cast<std::size_t>(i)])) ++distinct;
    return distinct;
}

} // namespace detail

// k-means with k-means++ seeding; capped at `max_iters` Lloyd iterations or
// convergence (max centroid shift < 1e-6). Empty clusters are re-seeded from
// the points farthest from their assigned centroids.
inline VqCodebook train_vq(const std::vector<const MelFrameSequence*>& corpus, int k,
                           std::uint64_t seed, std::string corpus_id = "", int max_iters = 50) {
    if (k <= 0) fail_contract("train_vq: k must be positive");
    std::int64_t total = 0;
    for (const auto* seq : corpus) {
        if (!seq->raw()) fail_contract("train_vq: corpus must be raw mel frames");
        total += seq->n_frames();
    }
    if (total == 0) fail_contract("train_vq: empty corpus");
    const std::int64_t d = melspec::kBins;
    Tensor x({total, d});
    std::int64_t row = 0;
    for (const auto* seq : corpus) {
        std::copy(seq->frames.data(), seq->frames.data() + seq->frames.numel(), x.data() + row * d);
        row += seq->n_frames();
    }

    const std::int64_t distinct = detail::count_distinct_rows(x);
    if (distinct < k)
        fail_contract("train_vq: only ", distinct, " distinct frames for k=", k,
                      "; use a smaller codebook (k <= ", distinct, ")");

    // k-means++ seeding.
    Rng rng = Rng(seed).child("kmeans++");
    Tensor centroids({k, d});
    std::vector<double> mind(static_cast<std::size_t>(total));
    {
        const std::int64_t first = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total)));
        std::copy(x.data() + first * d, x.data() + (first + 1) * d, centroids.data());
        eigen::CMap X = eigen::map(std::as_const(x));
        for (std::int64_t i = 0; i < total; ++i)
            mind[static_cast<std::size_t>(i)] =
                (X.row(i) - eigen::map(std::as_const(centroids)).row(0)).squaredNorm();
        for (int c = 1; c < k; ++c) {
            double sum = 0.0;
            for (double v : mind) sum += v;
            std::int64_t pick = -1;
            if (sum <= 0.0) {
                // All mass on already-chosen points; take the first unused distinct row.
                for (std::int64_t i = 0; i < total && pick < 0; ++i)
                    if (mind[static_cast<std::size_t>(i)] > 0.0) pick = i;
                if (pick < 0) pick = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(total)));
            } else {
                const double r = rng.uniform() * sum;
                double acc = 0.0;
                pick = total - 1;
                for (std::int64_t i = 0; i < total; ++i) {
                    acc += mind[static_cast<std::size_t>(i)];
                    if (acc >= r) {
                        pick = i;
                        break;
                    }
                }
            }
            std::copy(x.data() + pick * d, x.data() + (pick + 1) * d, centroids.data() + c * d);
            for (std::int64_t i = 0; i < total; ++i) {
                const double dist =
                    (eigen::map(x).row(i) - eigen::map(centroids).row(c)).squaredNorm();
                auto& m = mind[static_cast<std::size_t>(i)];
                m = std::min(m, dist);
            }
        }
    }

    std::vector<int> assign;
    Tensor next({k, d});
    std::vector<std::int64_t> counts(static_cast<std::size_t>(k));
    int iters = 0;
    for (; iters < max_iters; ++iters) {
        detail::assign_nearest(x, centroids, assign);
        next.fill(0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::int64_t i = 0; i < total; ++i) {
            const int c = assign[static_cast<std::size_t>(i)];
            counts[static_cast<std::size_t>(c)] += 1;
            for (std::int64_t j = 0; j < d; ++j) next.at(c, j) += x.at(i, j);
        }
        // Re-seed empty clusters from the farthest points, one each.
        std::vector<std::int64_t> reseed_order;
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<std::size_t>(c)] == 0) reseed_order.push_back(c);
        if (!reseed_order.empty()) {
            std::vector<double> dist(static_cast<std::size_t>(total));
            for (std::int64_t i = 0; i < total; ++i)
                dist[static_cast<std::size_t>(i)] =
                    (eigen::map(x).row(i) -
                     eigen::map(centroids).row(assign[static_cast<std::size_t>(i)]))
                        .squaredNorm();
            std::vector<std::int64_t> by_dist(static_cast<std::size_t>(total));
            for (std::int64_t i = 0; i < total; ++i) by_dist[static_cast<std::size_t>(i)] = i;
            std::sort(by_dist.begin(), by_dist.end(), [&](std::int64_t a, std::int64_t b) {
                if (dist[static_cast<std::size_t>(a)] != dist[static_cast<std::size_t>(b)])
                    return dist[static_cast<std::size_t>(a)] > dist[static_cast<std::size_t>(b)];
                return a < b;
            });
            std::size_t take = 0;
            for (std::int64_t c : reseed_order) {
                const std::int64_t p = by_dist[take++];
                for (std::int64_t j = 0; j < d; ++j) next.at(c, j) = x.at(p, j);
                counts[static_cast<std::size_t>(c)] = 1;
            }
        }
        double max_shift = 0.0;
        for (int c = 0; c < k; ++c) {
            const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
            double shift = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double m = next.at(c, j) * inv;
                const double diff = m - centroids.at(c, j);
                shift += diff * diff;
                centroids.at(c, j) = m;
            }
            max_shift = std::max(max_shift, std::sqrt(shift));
        }
        if (max_shift < 1e-6) {
            ++iters;
            break;
        }
    }

    VqCodebook book;
    book.centroids = std::move(centroids);
    book.trained_on = std::move(corpus_id);
    book.iterations = iters;
    return book;
}

// Nearest-centroid (Euclidean) encoding, ties toward the lowest id.
inline TokenSequence encode_vq(const MelFrameSequence& seq, const VqCodebook& book) {
    if (!seq.raw()) fail_contract("encode_vq: expects raw mel frames, got '", seq.stats_id, "'");
    if (seq.frames.cols() != book.dim())
        fail_contract("encode_vq: frame dim ", seq.frames.cols(), " != codebook dim ", book.dim());
    TokenSequence out;
    out.vocab = static_cast<int>(book.k());
    out.source = TokenSequence::Source::vq;
    detail::assign_nearest(seq.frames, book.centroids, out.ids);
    return out;
}

// Mean squared distance to the nearest centroid; k-means' objective.
inline double quantization_error(const std::vector<const MelFrameSequence*>& corpus,
                                 const VqCodebook& book) {
    double acc = 0.0;
    std::int64_t n = 0;
    std::vector<int> assign;
    for (const auto* seq : corpus) {
        detail::assign_nearest(seq->frames, book.centroids, assign);
        for (std::int64_t i = 0; i < seq->n_frames(); ++i) {
            acc += (eigen::map(seq->frames).row(i) -
                    eigen::map(book.centroids).row(assign[static_cast<std::size_t>(i)]))
                       .squaredNorm();
            ++n;
        }
    }
    return n > 0 ? acc / static_cast<double>(n) : 0.0;
}

// ---- WGC1 file format ----

inline void save_codebook(const std::filesystem::path& path, const VqCodebook& book) {
    ByteWriter w;
    w.magic("WGC1");
    w.u32(static_cast<std::uint32_t>(book.k()));
    w.u32(static_cast<std::uint32_t>(book.dim()));
    for (std::int64_t i = 0; i < book.centroids.numel(); ++i)
        w.f32(static_cast<float>(book.centroids[i]));
    w.str(book.trained_on);
    w.save(path);
}

inline VqCodebook load_codebook(const std::filesystem::path& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("WGC1");
    const std::uint32_t k = r.u32();
    const std::uint32_t dim = r.u32();
    if (k == 0 || dim == 0) r.err("empty codebook");
    VqCodebook book;
    book.centroids = Tensor({static_cast<std::int64_t>(k), static_cast<std::int64_t>(dim)});
    for (std::int64_t i = 0; i < book.centroids.numel(); ++i) book.centroids[i] = r.f32();
    book.trained_on = r.str();
    return book;
}

} // namespace wgpt
