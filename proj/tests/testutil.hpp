#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace tptest {

using traceprune::real;
using traceprune::SplitMix64;
using traceprune::Tensor;

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle. Independent of the backward pass: the
// numeric side only re-evaluates the forward function under perturbation.
// Error metric: |analytic - numeric| / max(1, |analytic|, |numeric|).
// ---------------------------------------------------------------------------

inline double gradcheck_eps() {
#ifdef TRACEPRUNE_REAL_DOUBLE
    return 1e-6;
#else
    return 1e-3;
#endif
}

inline double gradcheck_tol() {
#ifdef TRACEPRUNE_REAL_DOUBLE
    return 1e-5;
#else
    return 1e-2;
#endif
}

// Max relative error of d(loss)/d(leaf) over every element of every leaf.
// `make_loss` must rebuild the whole forward from the leaves' current data.
inline double max_grad_error(std::vector<Tensor>& leaves,
                             const std::function<Tensor()>& make_loss,
                             double eps = gradcheck_eps()) {
    Tensor loss = make_loss();
    traceprune::backward(loss);
    double worst = 0.0;
    for (Tensor& leaf : leaves) {
        std::vector<real> analytic(leaf.grad().begin(), leaf.grad().end());
        for (size_t i = 0; i < analytic.size(); ++i) {
            const real saved = leaf.data()[i];
            leaf.data()[i] = saved + static_cast<real>(eps);
            const double up = static_cast<double>(make_loss().item());
            leaf.data()[i] = saved - static_cast<real>(eps);
            const double down = static_cast<double>(make_loss().item());
            leaf.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = static_cast<double>(analytic[i]);
            const double err = std::abs(a - numeric) /
                               std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline Tensor random_tensor(const traceprune::Shape& shape, SplitMix64& rng,
                            bool requires_grad = true, double scale = 1.0) {
    Tensor t = Tensor::zeros(shape, requires_grad);
    for (real& v : t.data()) v = static_cast<real>((rng.uniform() * 2.0 - 1.0) * scale);
    return t;
}

// ---------------------------------------------------------------------------
// Synthetic corpus with exactly 65 distinct characters and Shakespeare-like
// structure (speaker headings, punctuated dialogue lines, Zipf-weighted word
// frequencies). Deterministic in (seed, length).
// ---------------------------------------------------------------------------

class CorpusWriter {
  public:
    explicit CorpusWriter(uint64_t seed) : rng_(traceprune::mix_seed(seed, 0xc0)) {
        build_words();
    }

    std::string generate(size_t min_bytes) {
        std::string out;
        out.reserve(min_bytes + 256);
        // fixed prologue pins the character set at exactly 65 distinct bytes
        out += "ACT 3. SCENE 3.\n"
               "THE QUICK BROWN FOX JUMPS OVER THE LAZY DOG;\n"
               "a purse of $3 & 3 rings, 'tis well-met -- why?!\n";
        size_t block = 0;
        while (out.size() < min_bytes) {
            if (block % 7 == 0) emit_heading(out);
            emit_speech(out);
            ++block;
        }
        return out;
    }

  private:
    SplitMix64 rng_;
    std::vector<std::string> words_;
    std::vector<double> cumw_;
    std::vector<std::string> speakers_;

    void build_words() {
        static const char* syllables[] = {
            "th", "er", "on", "an", "re", "he", "in", "ed",  "nd", "ha", "at", "en",
            "es", "of", "or", "nt", "ea", "ti", "to", "it",  "st", "io", "le", "is",
            "ou", "ar", "as", "de", "rt", "ve", "lo", "mi",  "gh", "wa", "ro", "pe",
            "ck", "um", "bl", "fa", "qu", "ju", "xi", "zy",  "ke", "vo", "wi", "my"};
        const size_t n_syll = sizeof(syllables) / sizeof(syllables[0]);
        const size_t n_words = 700;
        double total = 0.0;
        for (size_t i = 0; i < n_words; ++i) {
            std::string w;
            const int parts = 1 + static_cast<int>(rng_.below(3));
            for (int p = 0; p < parts; ++p) w += syllables[rng_.below(n_syll)];
            words_.push_back(w);
            total += 1.0 / static_cast<double>(i + 1);  // Zipf
            cumw_.push_back(total);
        }
        for (int i = 0; i < 14; ++i) {
            std::string s = words_[rng_.below(60)];
            for (char& c : s) c = static_cast<char>(std::toupper(c));
            speakers_.push_back(s);
        }
    }

    const std::string& pick_word() {
        const double r = rng_.uniform() * cumw_.back();
        const size_t i = std::lower_bound(cumw_.begin(), cumw_.end(), r) - cumw_.begin();
        return words_[std::min(i, words_.size() - 1)];
    }

    void emit_heading(std::string& out) {
        // rare structural lines keep the digit and symbol characters in use
        switch (rng_.below(4)) {
            case 0: out += "ACT 3. SCENE 3.\n"; break;
            case 1: out += "A crown; a purse of $3 & 3 rings.\n"; break;
            case 2: out += "Enter " + speakers_[rng_.below(speakers_.size())] + " & attendants.\n"; break;
            default: out += "Flourish. Exeunt &c.\n"; break;
        }
    }

    void emit_speech(std::string& out) {
        out += speakers_[rng_.below(speakers_.size())];
        out += ":\n";
        const int lines = 1 + static_cast<int>(rng_.below(4));
        for (int l = 0; l < lines; ++l) {
            const int n = 3 + static_cast<int>(rng_.below(9));
            for (int w = 0; w < n; ++w) {
                std::string word = pick_word();
                if (w == 0) {
                    word[0] = static_cast<char>(std::toupper(word[0]));
                } else {
                    out += ' ';
                    const uint64_t deco = rng_.below(24);
                    if (deco == 0) word = "'" + word;          // 'tis
                    else if (deco == 1) word += "'s";          // possessive
                    else if (deco == 2) word += "-" + pick_word();
                }
                out += word;
                if (w + 1 < n && rng_.below(10) == 0) {
                    static const char* marks[] = {",", ";", ":"};
                    out += marks[rng_.below(3)];
                }
            }
            static const char* ends[] = {".", ".", ".", "!", "?"};
            out += ends[rng_.below(5)];
            out += '\n';
        }
    }
};

inline std::string synth_corpus(size_t min_bytes, uint64_t seed = 7) {
    return CorpusWriter(seed).generate(min_bytes);
}

inline std::filesystem::path test_dir(const std::string& name) {
    std::filesystem::path dir =
        std::filesystem::temp_directory_path() / ("traceprune_" + name);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::filesystem::path write_corpus_file(const std::string& name, size_t min_bytes,
                                               uint64_t seed = 7) {
    std::filesystem::path path = test_dir("corpora") / (name + ".txt");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << synth_corpus(min_bytes, seed);
    return path;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace tptest
