from .model import (
    BASE_JOINTS,
    FINGERS,
    TIP_JOINTS,
    HandMesh,
    HandModel,
    HandModelData,
    HandPose,
    HandShape,
    HandSkeleton,
    bone_lengths,
    load_model_data,
    save_model_data,
)
from .ik import inverse_kinematics, sample_anatomical_theta, theta_from_flexion
