// SPDX-License-Identifier: Apache-2.0
#pragma once

// Out-of-process classifier bridge. The parent forks a serving process and
// speaks a small binary protocol over pipes:
//   request:  u32 ndims, i32 dims[ndims], f32 payload (row-major, LE)
//   response: i32 label, u32 nprobs, f64 probs[nprobs]
// The server loop runs until its input pipe closes.

#include <sys/wait.h>
#include <unistd.h>

#include <cstring>
#include <functional>

#include "cfx/classifier.hpp"

namespace cfx {

namespace detail {

inline void write_all(int fd, const void* buf, size_t n) {
    const char* p = static_cast<const char*>(buf);
    while (n > 0) {
        ssize_t w = ::write(fd, p, n);
        if (w <= 0) throw std::runtime_error("bridge: write failed");
        p += w;
        n -= static_cast<size_t>(w);
    }
}

inline bool read_all(int fd, void* buf, size_t n) {
    char* p = static_cast<char*>(buf);
    size_t got = 0;
    while (got < n) {
        ssize_t r = ::read(fd, p + got, n - got);
        if (r == 0) return got == 0 ? false : throw std::runtime_error("bridge: short read");
        if (r < 0) throw std::runtime_error("bridge: read failed");
        got += static_cast<size_t>(r);
    }
    return true;
}

} // namespace detail

inline void write_bridge_request(int fd, const Tensor<float>& image) {
    const uint32_t ndims = static_cast<uint32_t>(image.shape.size());
    detail::write_all(fd, &ndims, sizeof(ndims));
    detail::write_all(fd, image.shape.data(), ndims * sizeof(int));
    detail::write_all(fd, image.data.data(), static_cast<size_t>(image.numel()) * sizeof(float));
}

inline bool read_bridge_request(int fd, Tensor<float>& image) {
    uint32_t ndims = 0;
    if (!detail::read_all(fd, &ndims, sizeof(ndims))) return false;
    if (ndims == 0 || ndims > 8) throw std::runtime_error("bridge: bad request dims");
    std::vector<int> shape(ndims);
    detail::read_all(fd, shape.data(), ndims * sizeof(int));
    image = Tensor<float>(shape);
    detail::read_all(fd, image.data.data(), static_cast<size_t>(image.numel()) * sizeof(float));
    return true;
}

inline void write_bridge_response(int fd, const Prediction& pr) {
    const int32_t label = pr.label;
    const uint32_t nprobs = static_cast<uint32_t>(pr.probabilities.size());
    detail::write_all(fd, &label, sizeof(label));
    detail::write_all(fd, &nprobs, sizeof(nprobs));
    detail::write_all(fd, pr.probabilities.data(), nprobs * sizeof(double));
}

inline Prediction read_bridge_response(int fd) {
    int32_t label = 0;
    uint32_t nprobs = 0;
    if (!detail::read_all(fd, &label, sizeof(label)))
        throw std::runtime_error("bridge: server closed the pipe");
    detail::read_all(fd, &nprobs, sizeof(nprobs));
    Prediction pr;
    pr.label = label;
    pr.probabilities.resize(nprobs);
    detail::read_all(fd, pr.probabilities.data(), nprobs * sizeof(double));
    return pr;
}

/// Serves predictions on (in_fd, out_fd) until in_fd reaches end of file.
/// Returns the number of requests answered.
inline int64_t serve_classifier(const BlackBoxClassifier& clf, int in_fd, int out_fd) {
    int64_t served = 0;
    Tensor<float> image;
    while (read_bridge_request(in_fd, image)) {
        write_bridge_response(out_fd, clf.predict(image));
        ++served;
    }
    return served;
}

/// Runs a classifier in a forked child process behind the predict surface.
/// `spawn` runs in the child and must construct the classifier there (so the
/// parent genuinely never holds the model).
class SubprocessClassifier final : public BlackBoxClassifier {
public:
    explicit SubprocessClassifier(const std::function<std::unique_ptr<BlackBoxClassifier>()>& spawn) {
        int to_child[2], from_child[2];
        if (pipe(to_child) != 0 || pipe(from_child) != 0)
            throw std::runtime_error("bridge: pipe failed");
        pid_ = fork();
        if (pid_ < 0) throw std::runtime_error("bridge: fork failed");
        if (pid_ == 0) {
            ::close(to_child[1]);
            ::close(from_child[0]);
            int rc = 0;
            try {
                auto clf = spawn();
                serve_classifier(*clf, to_child[0], from_child[1]);
            } catch (...) {
                rc = 1;
            }
            ::close(to_child[0]);
            ::close(from_child[1]);
            _exit(rc);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        req_fd_ = to_child[1];
        resp_fd_ = from_child[0];
    }

    ~SubprocessClassifier() override {
        if (req_fd_ >= 0) ::close(req_fd_);
        if (resp_fd_ >= 0) ::close(resp_fd_);
        if (pid_ > 0) {
            int status = 0;
            waitpid(pid_, &status, 0);
        }
    }

    SubprocessClassifier(const SubprocessClassifier&) = delete;
    SubprocessClassifier& operator=(const SubprocessClassifier&) = delete;

    Prediction predict(const Tensor<float>& image) const override {
        write_bridge_request(req_fd_, image);
        return read_bridge_response(resp_fd_);
    }

private:
    pid_t pid_ = -1;
    int req_fd_ = -1;
    int resp_fd_ = -1;
};

} // namespace cfx
