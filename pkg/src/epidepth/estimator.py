"""scikit-learn style front end to :func:`densify_scene`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .blend import BlendStrategy
from .errors import InconsistentScene
from .fuse import Scene, check_scene, densify_scene, pair_kernels
from .validation import check_depth_bounds, check_epsilon, check_n_jobs, check_stride


class NexusDensifier(BaseEstimator, TransformerMixin):
    """Dense depth and a colored cloud from calibrated views and their flows.

    ``fit`` validates the parameters and caches per-pair epipolar constants for
    the scene's cameras; ``transform`` returns the fused :class:`PointCloud` and
    ``predict`` the per-view depth maps.  Later scenes must use the same
    cameras (flows and images may differ).

    Parameters
    ----------
    strategy : {"frdb", "average", "nearest", "weighted"}
    epsilon_d : float
        Pruning threshold in target pixels (strict ``<``).
    prune : bool
    stride : int
        Sample every ``stride``-th row and column of each view.
    depth_bounds : (float, float) or None
    n_jobs : int or None
        Worker threads; None or -1 uses every core.  Results do not depend on it.
    """

    def __init__(self, strategy="frdb", epsilon_d=1.0, prune=True, stride=1, depth_bounds=None, n_jobs=1):
        self.strategy = strategy
        self.epsilon_d = epsilon_d
        self.prune = prune
        self.stride = stride
        self.depth_bounds = depth_bounds
        self.n_jobs = n_jobs

    def _validate_params(self):
        BlendStrategy.parse(self.strategy)
        check_epsilon(self.epsilon_d)
        check_stride(self.stride)
        check_depth_bounds(self.depth_bounds)
        check_n_jobs(self.n_jobs)

    def fit(self, X: Scene, y=None):
        self._validate_params()
        check_scene(X)
        self.kernels_ = pair_kernels(X.views)
        self.view_ids_ = list(X.view_ids)
        self._poses = {v.id: (v.K, v.rotation, v.translation, v.shape) for v in X.views}
        self.n_views_ = len(X.views)
        return self

    def _check_same_cameras(self, X: Scene):
        check_is_fitted(self, "kernels_")
        if list(X.view_ids) != self.view_ids_:
            raise InconsistentScene(f"fitted on views {self.view_ids_}, got {list(X.view_ids)}")
        for v in X.views:
            K, R, T, shape = self._poses[v.id]
            if v.shape != shape or not (np.array_equal(v.K, K) and np.array_equal(v.rotation, R) and np.array_equal(v.translation, T)):
                raise InconsistentScene(f"camera {v.id} differs from the fitted one")

    def _run(self, X: Scene):
        self._check_same_cameras(X)
        self._validate_params()
        return densify_scene(
            X,
            self.strategy,
            self.epsilon_d,
            self.stride,
            self.depth_bounds,
            prune=self.prune,
            n_jobs=self.n_jobs,
            kernels=self.kernels_,
            return_stats=True,
        )

    def transform(self, X: Scene):
        depth_maps, cloud, stats = self._run(X)
        self.stats_ = stats
        return cloud

    def predict(self, X: Scene):
        depth_maps, cloud, stats = self._run(X)
        self.stats_ = stats
        return depth_maps

    def fit_transform(self, X: Scene, y=None, **fit_params):
        return self.fit(X, y).transform(X)
