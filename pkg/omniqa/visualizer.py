from typing import Optional

from skimage.util import montage as skimage_montage

import pandas as pd
import numpy as np
import logging
import cv2
import os

from omniqa.distortions.registry import DISTORTIONS, LEVELS, synth_distort
from omniqa.gcn import ViewportGraph
from omniqa.imgproc import save_png
from omniqa.sphere import ErpGeometry, lonlat_to_pix
from omniqa.viewpoint import Heatmap, ViewpointSet

logger = logging.getLogger(__name__)


class Visualizer:
    def __init__(self,
                 output_path: str,
                 font_scale: float = 0.35,
                 text_offset: int = 12):
        """
        Debug pictures and dumps of the viewport sampling stage.

        :param output_path: Root path of the generated visualizations.
        :param font_scale: cv2 font scale of the annotations.
        :param text_offset: Position (x and y, pixels) of the annotation baseline.
        """
        self.output_path = output_path

        # Annotation hyperparameters
        self.font = cv2.FONT_HERSHEY_SIMPLEX
        self.font_scale = font_scale
        self.thickness = 1
        self.text_offset_x = text_offset
        self.text_offset_y = text_offset
        self.rect_offset = 3

        os.makedirs(self.output_path, exist_ok=True)

    def _path(self, filename):
        return filename if os.path.isabs(filename) else os.path.join(self.output_path, filename)

    def save_heatmap(self, heatmap: Heatmap, filename: str = 'heatmap.png') -> str:
        """Store the heatmap as an 8-bit gray PNG scaled to its maximum."""
        grid = heatmap.grid
        peak = grid.max()
        scaled = np.zeros(grid.shape, dtype=np.uint8) if peak <= 0 else np.rint(255.0 * grid / peak).astype(np.uint8)
        path = self._path(filename)
        save_png(path, scaled)
        logger.info("heatmap stored at %s", path)
        return path

    def plot_viewpoints(self, erp: np.ndarray, viewpoints: ViewpointSet,
                        filename: str = 'viewpoints.png', radius: int = 3) -> str:
        """Mark every viewpoint on the ERP with a dot and its selection index."""
        canvas = np.ascontiguousarray(erp.copy())
        geometry = ErpGeometry.from_shape(canvas.shape)
        lons, lats = viewpoints.lonlat()
        xs, ys = lonlat_to_pix(lons, lats, geometry)
        for i, (x, y) in enumerate(zip(xs, ys)):
            center = (int(round(x)), int(round(y)))
            cv2.circle(canvas, center, radius, (255, 0, 0), cv2.FILLED)
            cv2.putText(canvas, str(i), (center[0] + radius + 1, center[1]), self.font,
                        self.font_scale, (255, 255, 0), self.thickness, cv2.LINE_AA)
        path = self._path(filename)
        save_png(path, canvas)
        return path

    def plot_viewports(self, viewports: np.ndarray, filename: str = 'viewports.png',
                       max_per_row: int = 5) -> str:
        """Montage of the viewports, each annotated with its index."""
        images = [self._annotate_img(v.copy(), str(i)) for i, v in enumerate(viewports)]
        num_cols = max(1, min(max_per_row, len(images)))
        num_rows = int(np.ceil(len(images) / num_cols))
        montage_arr = skimage_montage(images, channel_axis=3, grid_shape=(num_rows, num_cols),
                                      fill=(255, 255, 255))
        path = self._path(filename)
        save_png(path, montage_arr.astype(np.uint8))
        return path

    def save_viewports(self, viewports: np.ndarray, folder: Optional[str] = None):
        """One PNG per viewport, named by index."""
        folder = self._path(folder or 'viewports')
        os.makedirs(folder, exist_ok=True)
        paths = []
        for i, viewport in enumerate(viewports):
            paths.append(os.path.join(folder, f'viewport_{str(i).zfill(2)}.png'))
            save_png(paths[-1], viewport)
        return paths

    def plot_distortions(self, reference: np.ndarray, filename: str = 'distortions.png', seed: int = 0) -> str:
        """
        Image grid (N, 6): one row per distortion type, the annotated
        reference first and then the 5 levels.
        """
        images = []
        for distortion in DISTORTIONS:
            images.append(self._annotate_img(reference.copy(), distortion))
            for level in range(1, LEVELS + 1):
                images.append(synth_distort(reference, distortion, level, seed)[0])
        montage_arr = skimage_montage(images, channel_axis=3, grid_shape=(len(DISTORTIONS), LEVELS + 1),
                                      fill=(255, 255, 255))
        path = self._path(filename)
        save_png(path, montage_arr.astype(np.uint8))
        return path

    def dump_graph(self, graph: ViewportGraph, stem: str = 'graph'):
        """Affinity and normalized adjacency as CSV matrices."""
        paths = []
        for suffix, matrix in (('affinity', graph.affinity), ('adjacency', graph.normalized)):
            paths.append(self._path(f'{stem}_{suffix}.csv'))
            pd.DataFrame(matrix).to_csv(paths[-1], header=False, index=False, float_format='%.17g')
        return paths

    def _annotate_img(self, img, text):
        """White text on a black box at (text_offset_x, text_offset_y).

        :param img: Image to annotate (np.uint8)
        :param text: Text to add on the image.
        """
        (text_width, text_height), _ = cv2.getTextSize(text, self.font, self.font_scale, self.thickness)
        box_coords = (
            (self.text_offset_x - self.rect_offset, self.text_offset_y + self.rect_offset),
            (self.text_offset_x + text_width + self.rect_offset, self.text_offset_y - text_height - self.rect_offset)
        )
        img = np.ascontiguousarray(img)
        cv2.rectangle(img, box_coords[0], box_coords[1], (0, 0, 0), cv2.FILLED)
        cv2.putText(img, text, (self.text_offset_x, self.text_offset_y), self.font,
                    self.font_scale, (255, 255, 255), self.thickness, cv2.LINE_AA)
        return np.array(img)
