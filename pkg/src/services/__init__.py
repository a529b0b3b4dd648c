"""Services package for matching, evaluation, augmentation and dataset handling"""
